//! Per-bridge forwarding state machines for ARP-Path, Flow-Path and
//! Bridge-Path (MAC-in-MAC edge encapsulation).
//!
//! A [`BridgeState`] owns one bridge's forwarding table. Handlers take the
//! ingress port and the received frame and return a [`ForwardingDecision`]
//! listing the egress copies and every table mutation they performed.
//! Timers are evaluated lazily: every handler first expires entries up to
//! the current simulated time, so [`BridgeState::tick`] only needs to run
//! when the table must be inspected without traffic.

pub mod arp_path;
pub mod bridge_path;
pub mod flow_path;
mod frame;

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::sig12;
use crate::topology::{BridgeId, Endpoint, PortId, Topology};

pub use frame::{Encapsulation, Frame, FrameKind, Mac, OuterDst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ArpPath,
    FlowPath,
    BridgePath,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::ArpPath, Protocol::FlowPath, Protocol::BridgePath];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::ArpPath => "arp-path",
            Protocol::FlowPath => "flow-path",
            Protocol::BridgePath => "bridge-path",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arp-path" | "arp_path" | "arppath" => Ok(Protocol::ArpPath),
            "flow-path" | "flow_path" | "flowpath" => Ok(Protocol::FlowPath),
            "bridge-path" | "bridge_path" | "bridgepath" => Ok(Protocol::BridgePath),
            other => Err(format!(
                "unknown protocol `{other}` (expected arp-path, flow-path or bridge-path)"
            )),
        }
    }
}

/// Table timers, in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub lock_timer: f64,
    pub learnt_timer: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            lock_timer: 0.1,
            learnt_timer: 30.0,
        }
    }
}

/// The other end of a Flow-Path entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowPeer {
    /// Provisional ("A?") entry: the peer MAC is still being resolved, so the
    /// IP pair identifies the flow.
    Unknown {
        ip_src: Ipv4Addr,
        ip_dst: Ipv4Addr,
    },
    Known(Mac),
}

/// What a table entry is keyed on. Each protocol uses exactly one variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKey {
    /// ARP-Path: path towards a host MAC.
    Host(Mac),
    /// Flow-Path: path towards `mac_src` for its flow with `peer`.
    Flow { mac_src: Mac, peer: FlowPeer },
    /// Bridge-Path: path towards an edge bridge.
    Edge(BridgeId),
}

impl fmt::Display for EntryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryKey::Host(m) => write!(f, "{m}"),
            EntryKey::Flow {
                mac_src,
                peer: FlowPeer::Known(p),
            } => write!(f, "{mac_src}>{p}"),
            EntryKey::Flow {
                mac_src,
                peer: FlowPeer::Unknown { ip_src, ip_dst },
            } => write!(f, "{mac_src}>?[{ip_src}>{ip_dst}]"),
            EntryKey::Edge(b) => write!(f, "edge:{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryState {
    Locked,
    Learnt,
}

impl fmt::Display for EntryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryState::Locked => "locked",
            EntryState::Learnt => "learnt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardingEntry {
    pub key: EntryKey,
    pub port: PortId,
    pub state: EntryState,
    pub expires_at: f64,
    /// Set once the entry belongs to an established path: either a reply
    /// travelled through it or it was already learnt before a new flood
    /// re-locked it. Unconfirmed locked entries vanish when the lock fires.
    pub confirmed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMutation {
    Created {
        key: EntryKey,
        port: PortId,
        state: EntryState,
    },
    Relocked {
        key: EntryKey,
        from: PortId,
        to: PortId,
    },
    Repointed {
        key: EntryKey,
        from: PortId,
        to: PortId,
    },
    Confirmed {
        key: EntryKey,
    },
    Renamed {
        from: EntryKey,
        to: EntryKey,
    },
    Refreshed {
        key: EntryKey,
        expires_at: f64,
    },
    Learnt {
        key: EntryKey,
    },
    Removed {
        key: EntryKey,
    },
    DirectoryLearnt {
        mac: Mac,
        edge: BridgeId,
    },
    LocalHost {
        mac: Mac,
        port: PortId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// A later flood copy arrived on another port than the locked one.
    LateCopy,
    /// A flood copy arrived again on the locked port.
    Duplicate,
    /// No entry for a unicast destination.
    Miss,
    /// Bridge-Path edge has no directory mapping for the destination host.
    Unresolved,
    /// Flow-Path reply on a bridge holding no provisional entry for it.
    NoProvisional,
    /// The only candidate egress is the ingress port.
    Reflected,
}

/// One egress copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Egress {
    pub port: PortId,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardingDecision {
    pub outputs: Vec<Egress>,
    pub mutations: Vec<TableMutation>,
    pub drop: Option<DropReason>,
}

impl ForwardingDecision {
    fn dropped(reason: DropReason, mutations: Vec<TableMutation>) -> Self {
        ForwardingDecision {
            outputs: Vec::new(),
            mutations,
            drop: Some(reason),
        }
    }

    pub fn output_ports(&self) -> Vec<PortId> {
        self.outputs.iter().map(|e| e.port).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("bridge {bridge} has no port {port}")]
    UnknownPort { bridge: BridgeId, port: PortId },
}

/// An entry lifecycle event produced by [`BridgeState::tick`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryTransition {
    pub key: EntryKey,
    pub from: EntryState,
    /// `None` when the entry was removed.
    pub to: Option<EntryState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub edge: BridgeId,
    pub expires_at: f64,
}

/// Forwarding state of a single bridge.
#[derive(Debug, Clone)]
pub struct BridgeState {
    id: BridgeId,
    protocol: Protocol,
    config: ProtocolConfig,
    ports: Vec<Endpoint>,
    table: BTreeMap<EntryKey, ForwardingEntry>,
    /// Bridge-Path: host MAC → serving edge bridge.
    directory: BTreeMap<Mac, DirectoryEntry>,
    /// Bridge-Path: MACs of hosts seen on this bridge's own host ports.
    local_hosts: BTreeMap<Mac, PortId>,
    /// Flow-Path: flows whose provisional entry was confirmed while its
    /// flood may still be in flight, with the time the lock would have fired.
    race_guard: BTreeMap<(Mac, Ipv4Addr, Ipv4Addr), f64>,
}

impl BridgeState {
    pub fn new(
        id: BridgeId,
        ports: Vec<Endpoint>,
        protocol: Protocol,
        config: ProtocolConfig,
    ) -> Self {
        BridgeState {
            id,
            protocol,
            config,
            ports,
            table: BTreeMap::new(),
            directory: BTreeMap::new(),
            local_hosts: BTreeMap::new(),
            race_guard: BTreeMap::new(),
        }
    }

    pub fn from_topology(
        topology: &Topology,
        id: BridgeId,
        protocol: Protocol,
        config: ProtocolConfig,
    ) -> Self {
        let ports = topology.ports(id).iter().map(|p| p.peer).collect();
        BridgeState::new(id, ports, protocol, config)
    }

    /// One state per bridge of `topology`, in bridge id order.
    pub fn for_topology(
        topology: &Topology,
        protocol: Protocol,
        config: ProtocolConfig,
    ) -> Vec<Self> {
        topology
            .bridges()
            .map(|b| BridgeState::from_topology(topology, b, protocol, config))
            .collect()
    }

    pub fn id(&self) -> BridgeId {
        self.id
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn ports(&self) -> &[Endpoint] {
        &self.ports
    }

    pub fn entries(&self) -> impl Iterator<Item = &ForwardingEntry> {
        self.table.values()
    }

    pub fn entry(&self, key: &EntryKey) -> Option<&ForwardingEntry> {
        self.table.get(key)
    }

    pub fn entry_count(&self) -> usize {
        self.table.len()
    }

    pub fn directory(&self) -> &BTreeMap<Mac, DirectoryEntry> {
        &self.directory
    }

    pub fn peer(&self, port: PortId) -> Option<Endpoint> {
        self.ports.get(port.0 as usize).copied()
    }

    fn check_port(&self, port: PortId) -> Result<Endpoint, ProtocolError> {
        self.peer(port).ok_or(ProtocolError::UnknownPort {
            bridge: self.id,
            port,
        })
    }

    /// Processes one received frame according to this bridge's protocol.
    pub fn handle(
        &mut self,
        ingress: PortId,
        frame: Frame,
        now: f64,
    ) -> Result<ForwardingDecision, ProtocolError> {
        match self.protocol {
            Protocol::ArpPath => arp_path::handle(self, ingress, frame, now),
            Protocol::FlowPath => flow_path::handle(self, ingress, frame, now),
            Protocol::BridgePath => bridge_path::handle(self, ingress, frame, now),
        }
    }

    /// Applies every timer that fired at or before `now`.
    ///
    /// Locked entries whose lock fires become learnt if they are confirmed and
    /// are removed otherwise; the learnt timer starts at the lock expiry
    /// instant. Learnt entries past expiry are removed.
    pub fn tick(&mut self, now: f64) -> Vec<EntryTransition> {
        let mut out = Vec::new();
        let learnt_timer = self.config.learnt_timer;
        self.table.retain(|key, e| {
            if e.expires_at > now {
                return true;
            }
            match e.state {
                EntryState::Locked if e.confirmed => {
                    e.state = EntryState::Learnt;
                    e.expires_at += learnt_timer;
                    if e.expires_at > now {
                        out.push(EntryTransition {
                            key: *key,
                            from: EntryState::Locked,
                            to: Some(EntryState::Learnt),
                        });
                        true
                    } else {
                        out.push(EntryTransition {
                            key: *key,
                            from: EntryState::Locked,
                            to: None,
                        });
                        false
                    }
                }
                from => {
                    out.push(EntryTransition {
                        key: *key,
                        from,
                        to: None,
                    });
                    false
                }
            }
        });
        self.directory.retain(|_, d| d.expires_at > now);
        self.race_guard.retain(|_, until| *until > now);
        out
    }

    fn flood(&self, ingress: PortId, frame: &Frame) -> Vec<Egress> {
        (0..self.ports.len() as u32)
            .map(PortId)
            .filter(|&p| p != ingress)
            .map(|port| Egress {
                port,
                frame: frame.clone(),
            })
            .collect()
    }

    /// First-copy-wins race on a flooded frame keyed by `key`.
    fn race(
        &mut self,
        key: EntryKey,
        ingress: PortId,
        now: f64,
        muts: &mut Vec<TableMutation>,
    ) -> Result<(), DropReason> {
        let lock = self.config.lock_timer;
        match self.table.get_mut(&key) {
            Some(e) if e.state == EntryState::Locked => Err(if e.port == ingress {
                DropReason::Duplicate
            } else {
                DropReason::LateCopy
            }),
            Some(e) => {
                // A fresh race re-points a learnt entry; it stays a path entry.
                let from = e.port;
                e.port = ingress;
                e.state = EntryState::Locked;
                e.expires_at = now + lock;
                e.confirmed = true;
                muts.push(TableMutation::Relocked {
                    key,
                    from,
                    to: ingress,
                });
                Ok(())
            }
            None => {
                self.table.insert(
                    key,
                    ForwardingEntry {
                        key,
                        port: ingress,
                        state: EntryState::Locked,
                        expires_at: now + lock,
                        confirmed: false,
                    },
                );
                muts.push(TableMutation::Created {
                    key,
                    port: ingress,
                    state: EntryState::Locked,
                });
                Ok(())
            }
        }
    }

    /// Learns `key → ingress` directly in learnt state. Locked entries are
    /// left untouched.
    fn learn(&mut self, key: EntryKey, ingress: PortId, now: f64, muts: &mut Vec<TableMutation>) {
        let expires_at = now + self.config.learnt_timer;
        match self.table.get_mut(&key) {
            Some(e) if e.state == EntryState::Locked => {}
            Some(e) => {
                if e.port != ingress {
                    muts.push(TableMutation::Repointed {
                        key,
                        from: e.port,
                        to: ingress,
                    });
                    e.port = ingress;
                }
                e.expires_at = expires_at;
                muts.push(TableMutation::Refreshed { key, expires_at });
            }
            None => {
                self.table.insert(
                    key,
                    ForwardingEntry {
                        key,
                        port: ingress,
                        state: EntryState::Learnt,
                        expires_at,
                        confirmed: true,
                    },
                );
                muts.push(TableMutation::Created {
                    key,
                    port: ingress,
                    state: EntryState::Learnt,
                });
            }
        }
    }

    /// Looks up the egress for `key`, confirming a locked entry when
    /// `confirm` is set and refreshing a learnt one.
    fn follow(
        &mut self,
        key: EntryKey,
        ingress: PortId,
        now: f64,
        confirm: bool,
        muts: &mut Vec<TableMutation>,
    ) -> Result<PortId, DropReason> {
        let learnt_timer = self.config.learnt_timer;
        let e = self.table.get_mut(&key).ok_or(DropReason::Miss)?;
        match e.state {
            EntryState::Locked => {
                if confirm && !e.confirmed {
                    e.confirmed = true;
                    muts.push(TableMutation::Confirmed { key });
                }
            }
            EntryState::Learnt => {
                e.expires_at = now + learnt_timer;
                muts.push(TableMutation::Refreshed {
                    key,
                    expires_at: e.expires_at,
                });
            }
        }
        if e.port == ingress {
            return Err(DropReason::Reflected);
        }
        Ok(e.port)
    }

    /// Refreshes a learnt `key` if the frame arrived on its port.
    fn refresh_on_port(
        &mut self,
        key: EntryKey,
        ingress: PortId,
        now: f64,
        muts: &mut Vec<TableMutation>,
    ) {
        if let Some(e) = self.table.get_mut(&key) {
            if e.state == EntryState::Learnt && e.port == ingress {
                e.expires_at = now + self.config.learnt_timer;
                muts.push(TableMutation::Refreshed {
                    key,
                    expires_at: e.expires_at,
                });
            }
        }
    }
}

/// Live entry counts over a set of bridges.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TableCounts {
    pub per_bridge: BTreeMap<BridgeId, usize>,
    pub total: usize,
    /// Bridge-Path edge directory entries, reported apart from forwarding entries.
    pub directory_total: usize,
}

pub fn count_table_entries<'a>(states: impl IntoIterator<Item = &'a BridgeState>) -> TableCounts {
    let mut counts = TableCounts::default();
    for s in states {
        counts.per_bridge.insert(s.id, s.entry_count());
        counts.total += s.entry_count();
        counts.directory_total += s.directory.len();
    }
    counts
}

/// CSV dump with columns `protocol,bridge,key,port,state,expires_at`.
pub fn table_dump_csv<'a>(states: impl IntoIterator<Item = &'a BridgeState>) -> String {
    let mut out = String::from("protocol,bridge,key,port,state,expires_at\n");
    for s in states {
        for e in s.entries() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.protocol,
                s.id,
                e.key,
                e.port,
                e.state,
                sig12(e.expires_at)
            ));
        }
    }
    out
}
