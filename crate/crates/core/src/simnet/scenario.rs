//! Scenario files, topology references and the all-pairs table measurement.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowSpec, SimConfig, SimError, SimReport, Simulator};
use crate::protocol::{EntryKey, FlowPeer, Mac, Protocol};
use crate::topology::{
    make_crossed_grid, make_diamond, make_line, make_simple_grid, BridgeId, HostId, Topology,
};

/// Everything needed to run one simulation, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    /// `grid:N`, `crossed:N`, `line:N`, `diamond`, or a topology JSON path
    /// relative to the scenario file.
    pub topology: String,
    #[serde(default = "one")]
    pub hosts_per_edge: u32,
    pub protocol: Protocol,
    pub flows: Vec<FlowSpec>,
    pub seed: u64,
    pub duration: f64,
    #[serde(default)]
    pub config: SimConfig,
}

fn one() -> u32 {
    1
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Resolves the topology; relative file paths are taken from `base`.
    pub fn topology(&self, base: Option<&Path>) -> Result<Topology, SimError> {
        parse_topology_ref(&self.topology, self.hosts_per_edge, base)
    }

    pub fn run(&self, base: Option<&Path>) -> Result<(SimReport, String), SimError> {
        let t = self.topology(base)?;
        let mut sim = Simulator::new(&t, self.protocol, self.config.clone(), self.seed)?;
        for f in &self.flows {
            sim.add_flow(*f)?;
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::InvalidDuration(self.duration));
        }
        sim.run_until(self.duration);
        let dump = sim.table_dump_csv();
        Ok((sim.report(self.duration), dump))
    }
}

/// Parses a topology reference such as `grid:3`. Anything that is not a
/// generator name is read as a topology JSON file.
pub fn parse_topology_ref(
    spec: &str,
    hosts_per_edge: u32,
    base: Option<&Path>,
) -> Result<Topology, SimError> {
    let size = |s: &str| -> Result<u32, SimError> {
        s.parse()
            .map_err(|_| SimError::TopologyRef(spec.to_string()))
    };
    let t = match spec.split_once(':') {
        Some(("grid", n)) => make_simple_grid(size(n)?, hosts_per_edge)?,
        Some(("crossed", n)) => make_crossed_grid(size(n)?, hosts_per_edge)?,
        Some(("line", n)) => make_line(size(n)?, hosts_per_edge)?,
        _ if spec == "diamond" => make_diamond(),
        _ => {
            let path = match base {
                Some(dir) if Path::new(spec).is_relative() => dir.join(spec),
                _ => Path::new(spec).to_path_buf(),
            };
            Topology::from_json(&std::fs::read_to_string(path)?)?
        }
    };
    Ok(t)
}

/// One flow per ordered host pair, in (src, dst) order, started `spacing`
/// seconds apart from `start`.
pub fn all_pairs_workload(t: &Topology, start: f64, spacing: f64, size_bits: f64) -> Vec<FlowSpec> {
    let hosts: Vec<HostId> = t.hosts().map(|h| h.host).collect();
    let mut out = Vec::new();
    for &src in &hosts {
        for &dst in &hosts {
            if src != dst {
                out.push(FlowSpec {
                    src,
                    dst,
                    size_bits,
                    start_time: start + spacing * out.len() as f64,
                });
            }
        }
    }
    out
}

/// `count` flows between random distinct hosts, started `spacing` apart.
pub fn random_workload(
    t: &Topology,
    count: usize,
    spacing: f64,
    size_bits: f64,
    seed: u64,
) -> Vec<FlowSpec> {
    let hosts: Vec<HostId> = t.hosts().map(|h| h.host).collect();
    if hosts.len() < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut pair = hosts.choose_multiple(&mut rng, 2);
            let src = *pair.next().expect("two hosts");
            let dst = *pair.next().expect("two hosts");
            FlowSpec {
                src,
                dst,
                size_bits,
                start_time: spacing * i as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureOptions {
    /// Gap between consecutive flow starts; must exceed the lock timer so
    /// every race settles before the next one.
    pub spacing: f64,
    pub size_bits: f64,
    pub seed: u64,
    /// Extra time after the last flow before the tables are counted.
    pub settle: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            spacing: 0.25,
            size_bits: 1e5,
            seed: 1,
            settle: 1.0,
        }
    }
}

/// Steady-state table totals together with the path parameters measured
/// from the traces of the same run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalTables {
    pub protocol: Protocol,
    /// Entries counted in the bridge tables.
    pub total_entries: usize,
    /// Distinct forwarding keys found in the tables.
    pub keys: usize,
    /// Mean bridges on the paths created by ARP exchanges.
    pub b: f64,
    /// Mean size of a key's path union beyond b, from the reply traces.
    pub l_e: f64,
    pub edge_bridges: usize,
    pub hosts: usize,
    pub report: SimReport,
}

/// One flow per unordered host pair (lower id first), `spacing` apart.
pub fn pairs_workload(t: &Topology, start: f64, spacing: f64, size_bits: f64) -> Vec<FlowSpec> {
    all_pairs_workload(t, 0.0, 1.0, size_bits)
        .into_iter()
        .filter(|f| f.src < f.dst)
        .enumerate()
        .map(|(i, f)| FlowSpec {
            start_time: start + spacing * i as f64,
            ..f
        })
        .collect()
}

/// Forwarding keys whose path an exchange between `a` and `b` installs;
/// empty when the exchange creates no path.
fn exchange_keys(
    protocol: Protocol,
    edge: &BTreeMap<HostId, BridgeId>,
    a: HostId,
    b: HostId,
) -> Vec<EntryKey> {
    let (ma, mb) = (Mac::host(a), Mac::host(b));
    match protocol {
        Protocol::ArpPath => vec![EntryKey::Host(ma), EntryKey::Host(mb)],
        Protocol::FlowPath => vec![
            EntryKey::Flow {
                mac_src: ma,
                peer: FlowPeer::Known(mb),
            },
            EntryKey::Flow {
                mac_src: mb,
                peer: FlowPeer::Known(ma),
            },
        ],
        Protocol::BridgePath if edge[&a] == edge[&b] => Vec::new(),
        Protocol::BridgePath => vec![EntryKey::Edge(edge[&a]), EntryKey::Edge(edge[&b])],
    }
}

/// Runs one flow per host pair on an idle network and measures the table
/// size, b and L_e. For ARP-Path and Flow-Path paths run host to host; for
/// Bridge-Path they run edge to edge, so exchanges between hosts on the
/// same edge bridge create no path. L_e comes from the reply traces, not
/// from the tables, so comparing the two is a real check.
pub fn measure_empirical_tables(
    t: &Topology,
    protocol: Protocol,
    opts: &MeasureOptions,
) -> Result<EmpiricalTables, SimError> {
    let config = SimConfig::default();
    if opts.spacing <= config.timers.lock_timer {
        return Err(SimError::InvalidConfig(
            "all-pairs spacing must exceed the lock timer".into(),
        ));
    }
    let workload = pairs_workload(t, 0.0, opts.spacing, opts.size_bits);
    let last = workload.last().map_or(0.0, |f| f.start_time);
    let duration = last + opts.settle.max(2.0 * config.timers.lock_timer);
    if duration >= config.timers.learnt_timer {
        return Err(SimError::InvalidConfig(
            "workload outlasts the learnt timer; entries would age out".into(),
        ));
    }
    let mut sim = Simulator::new(t, protocol, config, opts.seed)?;
    for f in &workload {
        sim.add_flow(*f)?;
    }
    sim.run_until(duration);
    let report = sim.report(duration);

    let edge: BTreeMap<HostId, BridgeId> = t.hosts().map(|h| (h.host, h.bridge)).collect();
    let mut lengths = Vec::new();
    let mut unions: BTreeMap<EntryKey, BTreeSet<BridgeId>> = BTreeMap::new();
    for ex in &report.exchanges {
        let Some(trace) = &ex.reply_trace else {
            continue;
        };
        let keys = exchange_keys(protocol, &edge, ex.requester, ex.responder);
        if keys.is_empty() {
            continue;
        }
        lengths.push(trace.len() as f64);
        for k in keys {
            unions.entry(k).or_default().extend(trace.iter().copied());
        }
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let b = mean(&lengths);
    let union_sizes: Vec<f64> = unions.values().map(|u| u.len() as f64).collect();
    let l_e = if union_sizes.is_empty() {
        0.0
    } else {
        mean(&union_sizes) - b
    };
    let keys: BTreeSet<_> = sim
        .bridges()
        .flat_map(|s| s.entries().map(|e| e.key))
        .collect();
    Ok(EmpiricalTables {
        protocol,
        total_entries: report.final_tables.total,
        keys: keys.len(),
        b,
        l_e,
        edge_bridges: edge.values().collect::<BTreeSet<_>>().len(),
        hosts: edge.len(),
        report,
    })
}
