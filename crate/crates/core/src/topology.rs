//! Bridge/host graphs, the grid generators used by the scalability study, and
//! exhaustive enumeration of candidate paths between two bridges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a bridge. Generated grids number bridges `1..=n²` row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BridgeId(pub u32);

/// Identifier of an end host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

/// Port index local to one bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub u32);

impl fmt::Display for BridgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Edge,
    Core,
}

/// Physical characteristics shared by bridge links and host links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_bps: f64,
    pub prop_delay_s: f64,
}

impl Default for LinkParams {
    /// 1 Gbps with 1 µs of propagation delay.
    fn default() -> Self {
        LinkParams {
            bandwidth_bps: 1e9,
            prop_delay_s: 1e-6,
        }
    }
}

impl LinkParams {
    fn validate(&self) -> Result<(), TopologyError> {
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return Err(TopologyError::InvalidLink(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_bps
            )));
        }
        if !(self.prop_delay_s >= 0.0 && self.prop_delay_s.is_finite()) {
            return Err(TopologyError::InvalidLink(format!(
                "propagation delay must be nonnegative, got {}",
                self.prop_delay_s
            )));
        }
        Ok(())
    }
}

/// An undirected bridge-to-bridge link. Stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: BridgeId,
    pub b: BridgeId,
    pub params: LinkParams,
}

/// A host and the link connecting it to its edge bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostAttachment {
    pub host: HostId,
    pub bridge: BridgeId,
    pub params: LinkParams,
}

/// The far side of a bridge port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Bridge(BridgeId),
    Host(HostId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Bridge(b) => write!(f, "b{}", b.0),
            Endpoint::Host(h) => write!(f, "h{}", h.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port {
    pub id: PortId,
    pub peer: Endpoint,
    pub params: LinkParams,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid grid size {0}")]
    InvalidSize(u32),
    #[error("unknown bridge {0}")]
    UnknownBridge(BridgeId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("duplicate bridge id {0}")]
    DuplicateBridge(BridgeId),
    #[error("duplicate host id {0}")]
    DuplicateHost(HostId),
    #[error("self-loop on bridge {0}")]
    SelfLoop(BridgeId),
    #[error("more than one link between {0} and {1}")]
    DuplicateLink(BridgeId, BridgeId),
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("host {0} attaches to bridge {1}, which is not an edge bridge")]
    HostOnCoreBridge(HostId, BridgeId),
    #[error("topology has no bridges")]
    Empty,
    #[error("bridge graph is not connected")]
    NotConnected,
    #[error("no path between {0} and {1}")]
    Disconnected(BridgeId, BridgeId),
    #[error("source and destination are the same bridge {0}")]
    SameEndpoints(BridgeId),
    #[error("need at least two edge bridges, found {0}")]
    TooFewEdgeBridges(usize),
    #[error("topology file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which paths count as candidates between two bridges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathCriterion {
    ShortestOnly,
    ShortestPlusOne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathSet {
    pub source: BridgeId,
    pub destination: BridgeId,
    pub criterion: PathCriterion,
    pub paths: Vec<Vec<BridgeId>>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// A validated network of bridges and hosts. Immutable once built.
#[derive(Debug, Clone)]
pub struct Topology {
    roles: BTreeMap<BridgeId, Role>,
    links: Vec<Link>,
    hosts: BTreeMap<HostId, HostAttachment>,
    ports: BTreeMap<BridgeId, Vec<Port>>,
}

impl Topology {
    /// Validates and builds a topology.
    ///
    /// Every host must attach to an edge bridge and every bridge carrying a
    /// host is promoted to edge if it was declared core. An edge bridge with
    /// no hosts is accepted (an inactive edge, as in a grid built with zero
    /// hosts per corner).
    pub fn new(
        bridges: impl IntoIterator<Item = (BridgeId, Role)>,
        links: impl IntoIterator<Item = Link>,
        hosts: impl IntoIterator<Item = HostAttachment>,
    ) -> Result<Self, TopologyError> {
        let mut roles = BTreeMap::new();
        for (id, role) in bridges {
            if roles.insert(id, role).is_some() {
                return Err(TopologyError::DuplicateBridge(id));
            }
        }
        if roles.is_empty() {
            return Err(TopologyError::Empty);
        }

        let mut seen = BTreeSet::new();
        let mut norm_links = Vec::new();
        for link in links {
            let (a, b) = if link.a <= link.b {
                (link.a, link.b)
            } else {
                (link.b, link.a)
            };
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            for id in [a, b] {
                if !roles.contains_key(&id) {
                    return Err(TopologyError::UnknownBridge(id));
                }
            }
            link.params.validate()?;
            if !seen.insert((a, b)) {
                return Err(TopologyError::DuplicateLink(a, b));
            }
            norm_links.push(Link {
                a,
                b,
                params: link.params,
            });
        }

        let mut host_map = BTreeMap::new();
        for h in hosts {
            match roles.get(&h.bridge) {
                None => return Err(TopologyError::UnknownBridge(h.bridge)),
                Some(Role::Core) => return Err(TopologyError::HostOnCoreBridge(h.host, h.bridge)),
                Some(Role::Edge) => {}
            }
            h.params.validate()?;
            if host_map.insert(h.host, h).is_some() {
                return Err(TopologyError::DuplicateHost(h.host));
            }
        }

        let mut ports: BTreeMap<BridgeId, Vec<Port>> =
            roles.keys().map(|&id| (id, Vec::new())).collect();
        let mut neighbors: BTreeMap<BridgeId, Vec<(BridgeId, LinkParams)>> = BTreeMap::new();
        for l in &norm_links {
            neighbors.entry(l.a).or_default().push((l.b, l.params));
            neighbors.entry(l.b).or_default().push((l.a, l.params));
        }
        for (id, list) in ports.iter_mut() {
            let mut nbrs = neighbors.remove(id).unwrap_or_default();
            nbrs.sort_by_key(|(n, _)| *n);
            for (n, params) in nbrs {
                list.push(Port {
                    id: PortId(list.len() as u32),
                    peer: Endpoint::Bridge(n),
                    params,
                });
            }
            for h in host_map.values().filter(|h| h.bridge == *id) {
                list.push(Port {
                    id: PortId(list.len() as u32),
                    peer: Endpoint::Host(h.host),
                    params: h.params,
                });
            }
        }

        let topo = Topology {
            roles,
            links: norm_links,
            hosts: host_map,
            ports,
        };
        let start = *topo.roles.keys().next().expect("nonempty");
        if topo.bfs_distances(start).len() != topo.roles.len() {
            return Err(TopologyError::NotConnected);
        }
        Ok(topo)
    }

    pub fn bridges(&self) -> impl Iterator<Item = BridgeId> + '_ {
        self.roles.keys().copied()
    }

    pub fn bridge_count(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, id: BridgeId) -> Option<Role> {
        self.roles.get(&id).copied()
    }

    pub fn contains(&self, id: BridgeId) -> bool {
        self.roles.contains_key(&id)
    }

    pub fn edge_bridges(&self) -> Vec<BridgeId> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == Role::Edge)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn hosts(&self) -> impl Iterator<Item = &HostAttachment> {
        self.hosts.values()
    }

    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn host(&self, id: HostId) -> Option<&HostAttachment> {
        self.hosts.get(&id)
    }

    pub fn hosts_at(&self, bridge: BridgeId) -> Vec<HostId> {
        self.hosts
            .values()
            .filter(|h| h.bridge == bridge)
            .map(|h| h.host)
            .collect()
    }

    /// Ports of a bridge: bridge neighbours in ascending id order, then hosts.
    pub fn ports(&self, bridge: BridgeId) -> &[Port] {
        self.ports.get(&bridge).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn port_towards(&self, bridge: BridgeId, peer: Endpoint) -> Option<PortId> {
        self.ports(bridge)
            .iter()
            .find(|p| p.peer == peer)
            .map(|p| p.id)
    }

    pub fn neighbors(&self, bridge: BridgeId) -> impl Iterator<Item = BridgeId> + '_ {
        self.ports(bridge).iter().filter_map(|p| match p.peer {
            Endpoint::Bridge(b) => Some(b),
            Endpoint::Host(_) => None,
        })
    }

    pub fn has_link(&self, a: BridgeId, b: BridgeId) -> bool {
        self.neighbors(a).any(|n| n == b)
    }

    /// Hop distances from `from` to every reachable bridge.
    pub fn bfs_distances(&self, from: BridgeId) -> BTreeMap<BridgeId, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(from) {
            return dist;
        }
        dist.insert(from, 0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn check_pair(&self, src: BridgeId, dst: BridgeId) -> Result<(), TopologyError> {
        for id in [src, dst] {
            if !self.contains(id) {
                return Err(TopologyError::UnknownBridge(id));
            }
        }
        if src == dst {
            return Err(TopologyError::SameEndpoints(src));
        }
        Ok(())
    }

    /// All simple paths from `src` to `dst` admitted by `criterion`, in
    /// lexicographic order of their bridge sequences.
    pub fn enumerate_paths(
        &self,
        src: BridgeId,
        dst: BridgeId,
        criterion: PathCriterion,
    ) -> Result<PathSet, TopologyError> {
        self.check_pair(src, dst)?;
        let dist = self.bfs_distances(dst);
        let shortest = *dist
            .get(&src)
            .ok_or(TopologyError::Disconnected(src, dst))?;
        let bound = match criterion {
            PathCriterion::ShortestOnly => shortest,
            PathCriterion::ShortestPlusOne => shortest + 1,
        };

        let mut paths = Vec::new();
        let mut stack = vec![src];
        let mut on_path = BTreeSet::from([src]);
        self.dfs(dst, bound, &dist, &mut stack, &mut on_path, &mut paths);
        Ok(PathSet {
            source: src,
            destination: dst,
            criterion,
            paths,
        })
    }

    fn dfs(
        &self,
        dst: BridgeId,
        bound: usize,
        dist: &BTreeMap<BridgeId, usize>,
        stack: &mut Vec<BridgeId>,
        on_path: &mut BTreeSet<BridgeId>,
        out: &mut Vec<Vec<BridgeId>>,
    ) {
        let here = *stack.last().expect("stack starts with src");
        if here == dst {
            out.push(stack.clone());
            return;
        }
        let hops = stack.len() - 1;
        for next in self.neighbors(here) {
            if on_path.contains(&next) {
                continue;
            }
            // A simple path from `next` needs at least dist[next] more hops.
            if hops + 1 + dist[&next] > bound {
                continue;
            }
            stack.push(next);
            on_path.insert(next);
            self.dfs(dst, bound, dist, stack, on_path, out);
            on_path.remove(&next);
            stack.pop();
        }
    }

    /// The lexicographically smallest minimum-hop path from `src` to `dst`.
    pub fn canonical_shortest_path(
        &self,
        src: BridgeId,
        dst: BridgeId,
    ) -> Result<Vec<BridgeId>, TopologyError> {
        for id in [src, dst] {
            if !self.contains(id) {
                return Err(TopologyError::UnknownBridge(id));
            }
        }
        let dist = self.bfs_distances(dst);
        let mut d = *dist
            .get(&src)
            .ok_or(TopologyError::Disconnected(src, dst))?;
        let mut path = vec![src];
        let mut here = src;
        while d > 0 {
            here = self
                .neighbors(here)
                .find(|n| dist.get(n) == Some(&(d - 1)))
                .expect("a BFS predecessor always exists");
            path.push(here);
            d -= 1;
        }
        Ok(path)
    }

    /// The designated opposite-corner pair: lowest and highest edge bridge ids.
    pub fn corner_pair(&self) -> Result<(BridgeId, BridgeId), TopologyError> {
        let edges = self.edge_bridges();
        if edges.len() < 2 {
            return Err(TopologyError::TooFewEdgeBridges(edges.len()));
        }
        Ok((edges[0], edges[edges.len() - 1]))
    }

    /// Number of candidate paths between the opposite-corner edge bridges.
    pub fn available_path_count(&self, criterion: PathCriterion) -> Result<usize, TopologyError> {
        let (a, b) = self.corner_pair()?;
        Ok(self.enumerate_paths(a, b, criterion)?.len())
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            bridges: self
                .roles
                .iter()
                .map(|(&id, &role)| BridgeRecord { id, role })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkRecord {
                    a: l.a,
                    b: l.b,
                    bandwidth_bps: l.params.bandwidth_bps,
                    prop_delay_s: l.params.prop_delay_s,
                })
                .collect(),
            hosts: self
                .hosts
                .values()
                .map(|h| HostRecord {
                    id: h.host,
                    bridge: h.bridge,
                    bandwidth_bps: Some(h.params.bandwidth_bps),
                    prop_delay_s: Some(h.params.prop_delay_s),
                })
                .collect(),
        }
    }

    pub fn from_file(file: TopologyFile) -> Result<Self, TopologyError> {
        let default = LinkParams::default();
        Topology::new(
            file.bridges.into_iter().map(|b| (b.id, b.role)),
            file.links.into_iter().map(|l| Link {
                a: l.a,
                b: l.b,
                params: LinkParams {
                    bandwidth_bps: l.bandwidth_bps,
                    prop_delay_s: l.prop_delay_s,
                },
            }),
            file.hosts.into_iter().map(|h| HostAttachment {
                host: h.id,
                bridge: h.bridge,
                params: LinkParams {
                    bandwidth_bps: h.bandwidth_bps.unwrap_or(default.bandwidth_bps),
                    prop_delay_s: h.prop_delay_s.unwrap_or(default.prop_delay_s),
                },
            }),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        Topology::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("topology serializes")
    }
}

/// On-disk topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub bridges: Vec<BridgeRecord>,
    pub links: Vec<LinkRecord>,
    #[serde(default)]
    pub hosts: Vec<HostRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRecord {
    pub id: BridgeId,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub a: BridgeId,
    pub b: BridgeId,
    pub bandwidth_bps: f64,
    pub prop_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostRecord {
    pub id: HostId,
    pub bridge: BridgeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_delay_s: Option<f64>,
}

/// Row-major id of the bridge at (`row`, `col`) in an n×n grid.
pub fn grid_bridge(n: u32, row: u32, col: u32) -> BridgeId {
    BridgeId(row * n + col + 1)
}

/// The distinct corner bridges of an n×n grid, ascending.
pub fn grid_corners(n: u32) -> Vec<BridgeId> {
    let mut c = vec![
        grid_bridge(n, 0, 0),
        grid_bridge(n, 0, n - 1),
        grid_bridge(n, n - 1, 0),
        grid_bridge(n, n - 1, n - 1),
    ];
    c.dedup();
    c
}

fn build_grid(
    n: u32,
    hosts_per_corner: u32,
    params: LinkParams,
    diagonals: bool,
) -> Result<Topology, TopologyError> {
    let corners = grid_corners(n);
    let bridges = (0..n * n).map(|i| {
        let id = BridgeId(i + 1);
        let role = if corners.contains(&id) {
            Role::Edge
        } else {
            Role::Core
        };
        (id, role)
    });

    let mut links = Vec::new();
    let mut push = |a, b| links.push(Link { a, b, params });
    for r in 0..n {
        for c in 0..n {
            if c + 1 < n {
                push(grid_bridge(n, r, c), grid_bridge(n, r, c + 1));
            }
            if r + 1 < n {
                push(grid_bridge(n, r, c), grid_bridge(n, r + 1, c));
            }
            if diagonals && r + 1 < n && c + 1 < n {
                push(grid_bridge(n, r, c), grid_bridge(n, r + 1, c + 1));
                push(grid_bridge(n, r, c + 1), grid_bridge(n, r + 1, c));
            }
        }
    }

    let mut hosts = Vec::new();
    let mut next = 1;
    for &corner in &corners {
        for _ in 0..hosts_per_corner {
            hosts.push(HostAttachment {
                host: HostId(next),
                bridge: corner,
                params,
            });
            next += 1;
        }
    }
    Topology::new(bridges, links, hosts)
}

/// n×n lattice with horizontal and vertical links; corners are edge bridges.
pub fn make_simple_grid(n: u32, hosts_per_corner: u32) -> Result<Topology, TopologyError> {
    make_simple_grid_with(n, hosts_per_corner, LinkParams::default())
}

pub fn make_simple_grid_with(
    n: u32,
    hosts_per_corner: u32,
    params: LinkParams,
) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::InvalidSize(n));
    }
    build_grid(n, hosts_per_corner, params, false)
}

/// Simple grid plus both diagonals of every unit cell.
pub fn make_crossed_grid(n: u32, hosts_per_corner: u32) -> Result<Topology, TopologyError> {
    make_crossed_grid_with(n, hosts_per_corner, LinkParams::default())
}

pub fn make_crossed_grid_with(
    n: u32,
    hosts_per_corner: u32,
    params: LinkParams,
) -> Result<Topology, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n));
    }
    build_grid(n, hosts_per_corner, params, true)
}

/// A chain of `len` bridges with `hosts_per_end` hosts on each end bridge.
pub fn make_line(len: u32, hosts_per_end: u32) -> Result<Topology, TopologyError> {
    if len == 0 {
        return Err(TopologyError::InvalidSize(len));
    }
    let params = LinkParams::default();
    let ends = [BridgeId(1), BridgeId(len)];
    let bridges = (1..=len).map(|i| {
        let id = BridgeId(i);
        (
            id,
            if ends.contains(&id) {
                Role::Edge
            } else {
                Role::Core
            },
        )
    });
    let links = (1..len).map(|i| Link {
        a: BridgeId(i),
        b: BridgeId(i + 1),
        params,
    });
    let mut hosts = Vec::new();
    let mut ends = ends.to_vec();
    ends.dedup();
    for end in ends {
        for _ in 0..hosts_per_end {
            hosts.push(HostAttachment {
                host: HostId(hosts.len() as u32 + 1),
                bridge: end,
                params,
            });
        }
    }
    Topology::new(bridges, links, hosts)
}

/// Four bridges with two disjoint branches 1-2-3 and 1-4-3.
/// Host 1 sits on bridge 1 and host 2 on bridge 3.
pub fn make_diamond() -> Topology {
    let params = LinkParams::default();
    let bridges = [
        (BridgeId(1), Role::Edge),
        (BridgeId(2), Role::Core),
        (BridgeId(3), Role::Edge),
        (BridgeId(4), Role::Core),
    ];
    let links = [(1, 2), (2, 3), (1, 4), (4, 3)].map(|(a, b)| Link {
        a: BridgeId(a),
        b: BridgeId(b),
        params,
    });
    let hosts = [(1, 1), (2, 3)].map(|(h, b)| HostAttachment {
        host: HostId(h),
        bridge: BridgeId(b),
        params,
    });
    Topology::new(bridges, links, hosts).expect("diamond is valid")
}
