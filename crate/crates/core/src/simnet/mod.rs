//! Deterministic discrete-event simulation of a bridged network.
//!
//! Control frames (ARP Request/Reply and the per-flow path probe) are
//! simulated packet by packet: each directed link keeps a FIFO horizon
//! (`busy_until`) and every hop costs propagation + transmission + queueing.
//! Data flows are fluid: after its ARP exchange a flow is pinned to the
//! learned path and receives a max-min fair share of every link it crosses,
//! recomputed whenever a flow starts or ends. Active fluid flows make a link
//! look busier to control frames through a per-flow backlog of one data
//! frame, which is what lets a flood race steer new flows away from loaded
//! branches.

pub mod fluid;
mod queue;
pub mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    count_table_entries, table_dump_csv, BridgeState, DropReason, EntryState, Frame, FrameKind,
    Mac, Protocol, ProtocolConfig, TableCounts,
};
use crate::topology::{BridgeId, Endpoint, HostId, LinkParams, PortId, Topology, TopologyError};

pub use queue::EventQueue;
pub use scenario::{
    all_pairs_workload, measure_empirical_tables, pairs_workload, parse_topology_ref,
    random_workload, EmpiricalTables, MeasureOptions, ScenarioFile,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("flow from {0} to itself")]
    SelfFlow(HostId),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad topology reference {0:?}")]
    TopologyRef(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub timers: ProtocolConfig,
    /// ARP Request/Reply size.
    pub arp_frame_bits: u64,
    /// Size of the probe frame and of the per-flow backlog seen by control frames.
    pub data_frame_bits: u64,
    /// Processing delay added at every bridge hop.
    pub proc_delay_s: f64,
    /// Per-bridge overrides of `proc_delay_s`.
    pub proc_delay_overrides: BTreeMap<BridgeId, f64>,
    /// Period of timer ticks, utilization bins and table samples.
    pub sample_interval: f64,
    pub record_traces: bool,
    /// Hosts start with every peer in their ARP cache.
    pub arp_prepopulated: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            timers: ProtocolConfig::default(),
            arp_frame_bits: 64 * 8,
            data_frame_bits: 1500 * 8,
            proc_delay_s: 0.0,
            proc_delay_overrides: BTreeMap::new(),
            sample_interval: 0.1,
            record_traces: true,
            arp_prepopulated: false,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        let t = &self.timers;
        if !(t.lock_timer > 0.0 && t.learnt_timer > 0.0) {
            return Err(SimError::InvalidConfig("timers must be positive".into()));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(SimError::InvalidConfig(
                "sample_interval must be positive".into(),
            ));
        }
        if self.proc_delay_s < 0.0 || self.proc_delay_overrides.values().any(|d| *d < 0.0) {
            return Err(SimError::InvalidConfig(
                "processing delay must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn proc_delay(&self, bridge: BridgeId) -> f64 {
        self.proc_delay_overrides
            .get(&bridge)
            .copied()
            .unwrap_or(self.proc_delay_s)
    }
}

/// Output FIFO of one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PortQueue {
    /// Time at which the last queued frame finishes transmission.
    pub busy_until: f64,
    /// Data queued ahead of a control frame on behalf of active fluid flows.
    pub fluid_backlog_bits: f64,
}

/// Delay of one hop: `d_prop + d_trans + d_queue`, where queueing covers both
/// frames already scheduled on the link and the fluid backlog. Processing
/// delay is a per-bridge constant added by the caller.
pub fn latency_of_hop(link: &LinkParams, size_bits: u64, queue: &PortQueue, now: f64) -> f64 {
    let d_trans = size_bits as f64 / link.bandwidth_bps;
    let d_queue = (queue.busy_until - now).max(0.0) + queue.fluid_backlog_bits / link.bandwidth_bps;
    link.prop_delay_s + d_trans + d_queue
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src: HostId,
    pub dst: HostId,
    pub size_bits: f64,
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum FlowStatus {
    Pending,
    Resolving,
    Active,
    Completed { at: f64 },
    Failed { reason: DropReason },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub id: usize,
    pub spec: FlowSpec,
    /// Whether the flow triggered its own ARP exchange.
    pub arp_exchange: bool,
    pub data_start: Option<f64>,
    /// Bridges carrying the data, in order.
    pub path: Vec<BridgeId>,
    pub status: FlowStatus,
}

/// One ARP Request/Reply exchange.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exchange {
    pub requester: HostId,
    pub responder: HostId,
    pub started_at: f64,
    /// Bridges visited by the request copy that reached the responder.
    pub request_trace: Option<Vec<BridgeId>>,
    /// Bridges visited by the reply.
    pub reply_trace: Option<Vec<BridgeId>>,
    pub completed_at: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Delivered(HostId),
    Dropped(DropReason),
    /// A flood copy reached a bridge with no other port.
    DeadEnd,
    Malformed,
}

/// Life of one frame copy, recorded when the copy terminates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTrace {
    pub kind: FrameKind,
    pub src_mac: Mac,
    pub dst_mac: Mac,
    pub time: f64,
    pub trace: Vec<BridgeId>,
    pub outcome: TraceOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Counters {
    /// Frames created by hosts (ARP frames and data-path probes).
    pub originated: u64,
    /// Extra copies created by flooding.
    pub replicated: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    pub dead_ends: u64,
    pub malformed: u64,
    pub in_flight: u64,
}

impl Counters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// `originated + replicated == delivered + dropped + dead_ends + malformed + in_flight`.
    pub fn is_conserved(&self) -> bool {
        self.originated + self.replicated
            == self.delivered
                + self.dropped_total()
                + self.dead_ends
                + self.malformed
                + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkUtilization {
    pub from: Endpoint,
    pub to: Endpoint,
    /// Fraction of capacity used by data in each sample bin.
    pub utilization: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TableSnapshot {
    pub total: usize,
    pub locked: usize,
    pub learnt: usize,
    pub directory: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableSample {
    pub time: f64,
    #[serde(flatten)]
    pub counts: TableSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub duration: f64,
    pub sample_interval: f64,
    pub counters: Counters,
    pub flows: Vec<FlowRecord>,
    pub exchanges: Vec<Exchange>,
    pub links: Vec<LinkUtilization>,
    pub tables: Vec<TableSample>,
    pub final_tables: TableCounts,
    pub traces: Vec<FrameTrace>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `time,from,to,utilization` rows, one per link and bin.
    pub fn links_csv(&self) -> String {
        use crate::format::sig12;
        let mut out = String::from("time,from,to,utilization\n");
        for l in &self.links {
            for (i, u) in l.utilization.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    sig12(i as f64 * self.sample_interval),
                    l.from,
                    l.to,
                    sig12(*u)
                ));
            }
        }
        out
    }

    /// `time,total,locked,learnt,directory` rows.
    pub fn tables_csv(&self) -> String {
        use crate::format::sig12;
        let mut out = String::from("time,total,locked,learnt,directory\n");
        for s in &self.tables {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                sig12(s.time),
                s.counts.total,
                s.counts.locked,
                s.counts.learnt,
                s.counts.directory
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Event {
    Arrival {
        at: Endpoint,
        from: Endpoint,
        frame: Frame,
    },
    FlowStart(usize),
    FlowEnd {
        flow: usize,
        generation: u64,
    },
    TimerTick,
}

#[derive(Debug, Default, Clone)]
struct HostState {
    arp_cache: std::collections::BTreeSet<HostId>,
    /// Flows waiting for ARP resolution of the keyed peer.
    pending: BTreeMap<HostId, Vec<usize>>,
}

type DirLink = (Endpoint, Endpoint);

#[derive(Debug, Clone)]
struct FluidFlow {
    flow: usize,
    links: Vec<DirLink>,
    remaining_bits: f64,
    rate: f64,
    generation: u64,
}

/// One simulation run. Build it, add flows, then [`Simulator::run`].
#[derive(Debug)]
pub struct Simulator {
    topology: Topology,
    protocol: Protocol,
    config: SimConfig,
    seed: u64,
    bridges: BTreeMap<BridgeId, BridgeState>,
    hosts: BTreeMap<HostId, HostState>,
    mac_to_host: BTreeMap<Mac, HostId>,
    port_of: BTreeMap<(BridgeId, Endpoint), PortId>,
    link_params: BTreeMap<DirLink, LinkParams>,
    queues: BTreeMap<DirLink, PortQueue>,
    events: EventQueue<Event>,
    now: f64,
    horizon: Option<f64>,
    flows: Vec<FlowRecord>,
    fluid: Vec<FluidFlow>,
    fluid_clock: f64,
    exchanges: Vec<Exchange>,
    open_exchange: BTreeMap<(HostId, HostId), usize>,
    traces: Vec<FrameTrace>,
    counters: Counters,
    util_bits: BTreeMap<DirLink, Vec<f64>>,
    table_samples: Vec<TableSample>,
}

impl Simulator {
    pub fn new(
        topology: &Topology,
        protocol: Protocol,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let bridges = topology
            .bridges()
            .map(|b| {
                (
                    b,
                    BridgeState::from_topology(topology, b, protocol, config.timers),
                )
            })
            .collect();
        let mut port_of = BTreeMap::new();
        let mut link_params = BTreeMap::new();
        for b in topology.bridges() {
            for p in topology.ports(b) {
                port_of.insert((b, p.peer), p.id);
                link_params.insert((Endpoint::Bridge(b), p.peer), p.params);
                link_params.insert((p.peer, Endpoint::Bridge(b)), p.params);
            }
        }
        let all_hosts: Vec<HostId> = topology.hosts().map(|h| h.host).collect();
        let hosts = all_hosts
            .iter()
            .map(|&h| {
                let mut st = HostState::default();
                if config.arp_prepopulated {
                    st.arp_cache = all_hosts.iter().copied().filter(|&o| o != h).collect();
                }
                (h, st)
            })
            .collect();
        let mac_to_host = all_hosts.iter().map(|&h| (Mac::host(h), h)).collect();
        Ok(Simulator {
            topology: topology.clone(),
            protocol,
            config,
            seed,
            bridges,
            hosts,
            mac_to_host,
            port_of,
            link_params,
            queues: BTreeMap::new(),
            events: EventQueue::new(seed),
            now: 0.0,
            horizon: None,
            flows: Vec::new(),
            fluid: Vec::new(),
            fluid_clock: 0.0,
            exchanges: Vec::new(),
            open_exchange: BTreeMap::new(),
            traces: Vec::new(),
            counters: Counters::default(),
            util_bits: BTreeMap::new(),
            table_samples: Vec::new(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn bridge(&self, id: BridgeId) -> Option<&BridgeState> {
        self.bridges.get(&id)
    }

    pub fn bridges(&self) -> impl Iterator<Item = &BridgeState> {
        self.bridges.values()
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn traces(&self) -> &[FrameTrace] {
        &self.traces
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn queue(&self, from: Endpoint, to: Endpoint) -> PortQueue {
        self.queues.get(&(from, to)).copied().unwrap_or_default()
    }

    pub fn table_dump_csv(&self) -> String {
        table_dump_csv(self.bridges.values())
    }

    pub fn add_flow(&mut self, spec: FlowSpec) -> Result<usize, SimError> {
        for h in [spec.src, spec.dst] {
            if self.topology.host(h).is_none() {
                return Err(SimError::UnknownHost(h));
            }
        }
        if spec.src == spec.dst {
            return Err(SimError::SelfFlow(spec.src));
        }
        if !(spec.size_bits > 0.0 && spec.size_bits.is_finite()) {
            return Err(SimError::InvalidFlow(format!(
                "size_bits must be positive, got {}",
                spec.size_bits
            )));
        }
        if !(spec.start_time >= 0.0 && spec.start_time.is_finite()) {
            return Err(SimError::InvalidFlow(format!(
                "start_time must be nonnegative, got {}",
                spec.start_time
            )));
        }
        let id = self.flows.len();
        self.flows.push(FlowRecord {
            id,
            spec,
            arp_exchange: false,
            data_start: None,
            path: Vec::new(),
            status: FlowStatus::Pending,
        });
        self.events
            .push(spec.start_time.max(self.now), Event::FlowStart(id));
        Ok(id)
    }

    /// Processes every event with fire time ≤ `until`.
    pub fn run_until(&mut self, until: f64) {
        if self.horizon.is_none() {
            self.events.push(0.0, Event::TimerTick);
            self.horizon = Some(0.0);
        }
        while let Some(t) = self.events.peek_time() {
            if t > until {
                break;
            }
            let (t, ev) = self.events.pop().expect("peeked");
            debug_assert!(t >= self.now, "events must not go back in time");
            self.now = t;
            self.dispatch(ev);
        }
        self.advance_fluid(until.max(self.now));
        self.now = until.max(self.now);
        for b in self.bridges.values_mut() {
            b.tick(self.now);
        }
    }

    /// Runs to `duration` and produces the report.
    pub fn run(mut self, duration: f64) -> Result<SimReport, SimError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(SimError::InvalidDuration(duration));
        }
        self.run_until(duration);
        Ok(self.report(duration))
    }

    /// Report as of the current time.
    pub fn report(&mut self, duration: f64) -> SimReport {
        let interval = self.config.sample_interval;
        if self.table_samples.last().map(|s| s.time) != Some(self.now) {
            self.sample_tables();
        }
        let bins = bin_count(duration, interval);
        let mut links = Vec::new();
        for (&(from, to), params) in &self.link_params {
            let bits = self.util_bits.get(&(from, to));
            let utilization = (0..bins)
                .map(|i| {
                    let start = i as f64 * interval;
                    let width = (duration - start).min(interval);
                    let b = bits.and_then(|v| v.get(i)).copied().unwrap_or(0.0);
                    if width <= 0.0 {
                        0.0
                    } else {
                        (b / (params.bandwidth_bps * width)).clamp(0.0, 1.0)
                    }
                })
                .collect();
            links.push(LinkUtilization {
                from,
                to,
                utilization,
            });
        }
        let mut counters = self.counters.clone();
        counters.in_flight = self.in_flight_frames();
        SimReport {
            protocol: self.protocol,
            seed: self.seed,
            duration,
            sample_interval: interval,
            counters,
            flows: self.flows.clone(),
            exchanges: self.exchanges.clone(),
            links,
            tables: self.table_samples.clone(),
            final_tables: count_table_entries(self.bridges.values()),
            traces: self.traces.clone(),
        }
    }

    fn in_flight_frames(&self) -> u64 {
        // every pending arrival is one copy on a wire
        let c = &self.counters;
        (c.originated + c.replicated)
            - (c.delivered + c.dropped_total() + c.dead_ends + c.malformed)
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Arrival { at, from, frame } => match at {
                Endpoint::Bridge(b) => self.bridge_receive(b, from, frame),
                Endpoint::Host(h) => self.host_receive(h, frame),
            },
            Event::FlowStart(f) => self.flow_start(f),
            Event::FlowEnd { flow, generation } => self.flow_end(flow, generation),
            Event::TimerTick => {
                for b in self.bridges.values_mut() {
                    b.tick(self.now);
                }
                self.sample_tables();
                self.events
                    .push(self.now + self.config.sample_interval, Event::TimerTick);
            }
        }
    }

    fn sample_tables(&mut self) {
        let mut snap = TableSnapshot {
            total: 0,
            locked: 0,
            learnt: 0,
            directory: 0,
        };
        for b in self.bridges.values() {
            for e in b.entries() {
                snap.total += 1;
                match e.state {
                    EntryState::Locked => snap.locked += 1,
                    EntryState::Learnt => snap.learnt += 1,
                }
            }
            snap.directory += b.directory().len();
        }
        self.table_samples.push(TableSample {
            time: self.now,
            counts: snap,
        });
    }

    fn transmit(&mut self, from: Endpoint, to: Endpoint, frame: Frame) {
        let params = self.link_params[&(from, to)];
        let now = self.now;
        let queue = self.queues.entry((from, to)).or_default();
        let latency = latency_of_hop(&params, frame.size_bits, queue, now);
        let start = queue.busy_until.max(now) + queue.fluid_backlog_bits / params.bandwidth_bps;
        queue.busy_until = start + frame.size_bits as f64 / params.bandwidth_bps;
        let proc = match from {
            Endpoint::Bridge(b) => self.config.proc_delay(b),
            Endpoint::Host(_) => 0.0,
        };
        self.events.push(
            now + latency + proc,
            Event::Arrival {
                at: to,
                from,
                frame,
            },
        );
    }

    fn originate(&mut self, host: HostId, frame: Frame) {
        self.counters.originated += 1;
        let bridge = self.topology.host(host).expect("known host").bridge;
        self.transmit(Endpoint::Host(host), Endpoint::Bridge(bridge), frame);
    }

    fn record(&mut self, frame: &Frame, trace: Vec<BridgeId>, outcome: TraceOutcome) {
        if self.config.record_traces {
            self.traces.push(FrameTrace {
                kind: frame.kind,
                src_mac: frame.src_mac,
                dst_mac: frame.dst_mac,
                time: self.now,
                trace,
                outcome,
            });
        }
    }

    fn bridge_receive(&mut self, bridge: BridgeId, from: Endpoint, frame: Frame) {
        let ingress = self.port_of[&(bridge, from)];
        let mut trace = frame.trace.clone();
        trace.push(bridge);
        let meta = Frame {
            trace: Vec::new(),
            ..frame.clone()
        };
        let state = self.bridges.get_mut(&bridge).expect("known bridge");
        match state.handle(ingress, frame, self.now) {
            Err(_) => {
                self.counters.malformed += 1;
                self.record(&meta, trace, TraceOutcome::Malformed);
            }
            Ok(decision) => {
                if decision.outputs.is_empty() {
                    let outcome = match decision.drop {
                        Some(reason) => {
                            *self.counters.dropped.entry(reason).or_default() += 1;
                            TraceOutcome::Dropped(reason)
                        }
                        None => {
                            self.counters.dead_ends += 1;
                            TraceOutcome::DeadEnd
                        }
                    };
                    self.record(&meta, trace, outcome);
                    return;
                }
                self.counters.replicated += decision.outputs.len() as u64 - 1;
                let ports = self.bridges[&bridge].ports().to_vec();
                for egress in decision.outputs {
                    let to = ports[egress.port.0 as usize];
                    self.transmit(Endpoint::Bridge(bridge), to, egress.frame);
                }
            }
        }
    }

    fn host_receive(&mut self, host: HostId, frame: Frame) {
        self.counters.delivered += 1;
        let trace = frame.trace.clone();
        self.record(&frame, trace, TraceOutcome::Delivered(host));
        let own_mac = Mac::host(host);
        match frame.kind {
            FrameKind::ArpRequest => {
                if frame.dst_ip != Some(host.ip()) || frame.src_mac == own_mac {
                    return;
                }
                let Some(&requester) = self.mac_to_host.get(&frame.src_mac) else {
                    return;
                };
                self.hosts
                    .get_mut(&host)
                    .expect("known host")
                    .arp_cache
                    .insert(requester);
                if let Some(&x) = self.open_exchange.get(&(requester, host)) {
                    let ex = &mut self.exchanges[x];
                    if ex.request_trace.is_some() {
                        return;
                    }
                    ex.request_trace = Some(frame.trace.clone());
                }
                let reply = Frame::arp_reply(
                    own_mac,
                    frame.src_mac,
                    host.ip(),
                    requester.ip(),
                    self.config.arp_frame_bits,
                );
                self.originate(host, reply);
            }
            FrameKind::ArpReply => {
                if frame.dst_mac != own_mac {
                    return;
                }
                let Some(&responder) = self.mac_to_host.get(&frame.src_mac) else {
                    return;
                };
                if let Some(x) = self.open_exchange.remove(&(host, responder)) {
                    let ex = &mut self.exchanges[x];
                    ex.reply_trace = Some(frame.trace.clone());
                    ex.completed_at = Some(self.now);
                }
                let st = self.hosts.get_mut(&host).expect("known host");
                st.arp_cache.insert(responder);
                let waiting = st.pending.remove(&responder).unwrap_or_default();
                for f in waiting {
                    self.start_data(f);
                }
            }
            FrameKind::UnicastData => {}
        }
    }

    fn flow_start(&mut self, f: usize) {
        let spec = self.flows[f].spec;
        let cached = self.hosts[&spec.src].arp_cache.contains(&spec.dst);
        if self.protocol != Protocol::FlowPath
            && cached
            && self.probe_path(spec.src, spec.dst, false).is_ok()
        {
            self.start_data(f);
            return;
        }
        self.flows[f].arp_exchange = true;
        self.flows[f].status = FlowStatus::Resolving;
        let st = self.hosts.get_mut(&spec.src).expect("known host");
        let waiting = st.pending.entry(spec.dst).or_default();
        waiting.push(f);
        if waiting.len() > 1 && self.protocol != Protocol::FlowPath {
            // an exchange for this peer is already under way
            return;
        }
        let x = self.exchanges.len();
        self.exchanges.push(Exchange {
            requester: spec.src,
            responder: spec.dst,
            started_at: self.now,
            request_trace: None,
            reply_trace: None,
            completed_at: None,
        });
        self.open_exchange.insert((spec.src, spec.dst), x);
        let req = Frame::arp_request(
            Mac::host(spec.src),
            spec.src.ip(),
            spec.dst.ip(),
            self.config.arp_frame_bits,
        );
        self.originate(spec.src, req);
    }

    /// Walks a data frame hop by hop through the current tables. With
    /// `commit` the walk is counted and traced like any other frame and
    /// refreshes the entries it uses; otherwise it runs on scratch copies.
    fn probe_path(
        &mut self,
        src: HostId,
        dst: HostId,
        commit: bool,
    ) -> Result<Vec<BridgeId>, DropReason> {
        let frame = Frame::data(Mac::host(src), Mac::host(dst), self.config.data_frame_bits);
        let first = self.topology.host(src).expect("known host").bridge;
        let mut scratch: BTreeMap<BridgeId, BridgeState> = BTreeMap::new();
        let mut at = first;
        let mut ingress = self.port_of[&(first, Endpoint::Host(src))];
        let mut frame = frame;
        let limit = self.topology.bridge_count() + 1;
        if commit {
            self.counters.originated += 1;
        }
        let meta = Frame {
            trace: Vec::new(),
            ..frame.clone()
        };
        loop {
            let mut trace = frame.trace.clone();
            trace.push(at);
            let decision = if commit {
                self.bridges
                    .get_mut(&at)
                    .expect("known bridge")
                    .handle(ingress, frame, self.now)
            } else {
                let st = scratch
                    .entry(at)
                    .or_insert_with(|| self.bridges[&at].clone());
                st.handle(ingress, frame, self.now)
            };
            let decision = match decision {
                Ok(d) => d,
                Err(_) => {
                    if commit {
                        self.counters.malformed += 1;
                        self.record(&meta, trace, TraceOutcome::Malformed);
                    }
                    return Err(DropReason::Miss);
                }
            };
            let out = match (decision.outputs.len(), decision.drop) {
                (1, _) => decision.outputs.into_iter().next().expect("one output"),
                (0, reason) => {
                    let reason = reason.unwrap_or(DropReason::Miss);
                    if commit {
                        *self.counters.dropped.entry(reason).or_default() += 1;
                        self.record(&meta, trace, TraceOutcome::Dropped(reason));
                    }
                    return Err(reason);
                }
                _ => unreachable!("unicast frames are never replicated"),
            };
            let peer = self.bridges[&at].ports()[out.port.0 as usize];
            match peer {
                Endpoint::Host(h) => {
                    let path = out.frame.trace.clone();
                    if commit {
                        self.counters.delivered += 1;
                        self.record(&meta, path.clone(), TraceOutcome::Delivered(h));
                    }
                    return if h == dst {
                        Ok(path)
                    } else {
                        Err(DropReason::Miss)
                    };
                }
                Endpoint::Bridge(next) => {
                    if out.frame.trace.len() > limit {
                        return Err(DropReason::Miss);
                    }
                    ingress = self.port_of[&(next, Endpoint::Bridge(at))];
                    at = next;
                    frame = out.frame;
                }
            }
        }
    }

    fn start_data(&mut self, f: usize) {
        let spec = self.flows[f].spec;
        match self.probe_path(spec.src, spec.dst, true) {
            Err(reason) => self.flows[f].status = FlowStatus::Failed { reason },
            Ok(path) => {
                let mut hops: Vec<Endpoint> = vec![Endpoint::Host(spec.src)];
                hops.extend(path.iter().map(|&b| Endpoint::Bridge(b)));
                hops.push(Endpoint::Host(spec.dst));
                let links = hops.windows(2).map(|w| (w[0], w[1])).collect();
                let rec = &mut self.flows[f];
                rec.path = path;
                rec.data_start = Some(self.now);
                rec.status = FlowStatus::Active;
                self.advance_fluid(self.now);
                self.fluid.push(FluidFlow {
                    flow: f,
                    links,
                    remaining_bits: spec.size_bits,
                    rate: 0.0,
                    generation: 0,
                });
                self.reallocate();
            }
        }
    }

    fn flow_end(&mut self, flow: usize, generation: u64) {
        let Some(i) = self
            .fluid
            .iter()
            .position(|x| x.flow == flow && x.generation == generation)
        else {
            return;
        };
        self.advance_fluid(self.now);
        self.fluid.remove(i);
        self.flows[flow].status = FlowStatus::Completed { at: self.now };
        self.reallocate();
    }

    /// Moves every fluid flow forward to `t`, accumulating link usage.
    fn advance_fluid(&mut self, t: f64) {
        let from = self.fluid_clock;
        if t <= from {
            return;
        }
        let interval = self.config.sample_interval;
        for ff in &mut self.fluid {
            ff.remaining_bits = (ff.remaining_bits - ff.rate * (t - from)).max(0.0);
            if ff.rate <= 0.0 {
                continue;
            }
            for l in &ff.links {
                let bins = self.util_bits.entry(*l).or_default();
                add_to_bins(bins, interval, from, t, ff.rate);
            }
        }
        self.fluid_clock = t;
    }

    fn reallocate(&mut self) {
        let routes: Vec<Vec<DirLink>> = self.fluid.iter().map(|f| f.links.clone()).collect();
        let capacity: BTreeMap<DirLink, f64> = routes
            .iter()
            .flatten()
            .map(|l| (*l, self.link_params[l].bandwidth_bps))
            .collect();
        let rates = fluid::max_min_rates(&routes, &capacity);
        let mut per_link: BTreeMap<DirLink, u32> = BTreeMap::new();
        for (ff, rate) in self.fluid.iter_mut().zip(rates) {
            ff.rate = rate;
            ff.generation += 1;
            for l in &ff.links {
                *per_link.entry(*l).or_default() += 1;
            }
            let finish = if rate > 0.0 {
                self.now + ff.remaining_bits / rate
            } else {
                f64::INFINITY
            };
            if finish.is_finite() {
                self.events.push(
                    finish,
                    Event::FlowEnd {
                        flow: ff.flow,
                        generation: ff.generation,
                    },
                );
            }
        }
        let backlog = self.config.data_frame_bits as f64;
        for (l, q) in self.queues.iter_mut() {
            q.fluid_backlog_bits = per_link.get(l).copied().unwrap_or(0) as f64 * backlog;
        }
        for (l, n) in per_link {
            self.queues.entry(l).or_default().fluid_backlog_bits = n as f64 * backlog;
        }
    }
}

fn bin_count(duration: f64, interval: f64) -> usize {
    ((duration / interval).ceil() as usize).max(1)
}

fn add_to_bins(bins: &mut Vec<f64>, interval: f64, from: f64, to: f64, rate: f64) {
    let mut t = from;
    while t < to {
        let idx = (t / interval).floor() as usize;
        let bin_end = ((idx + 1) as f64 * interval).min(to);
        let end = if bin_end <= t { to } else { bin_end };
        if bins.len() <= idx {
            bins.resize(idx + 1, 0.0);
        }
        bins[idx] += rate * (end - t);
        t = end;
    }
}

/// Runs a workload on a fresh network and returns the report.
pub fn run_scenario(
    topology: &Topology,
    protocol: Protocol,
    workload: &[FlowSpec],
    seed: u64,
    duration: f64,
) -> Result<SimReport, SimError> {
    run_scenario_with(
        topology,
        protocol,
        workload,
        seed,
        duration,
        SimConfig::default(),
    )
}

pub fn run_scenario_with(
    topology: &Topology,
    protocol: Protocol,
    workload: &[FlowSpec],
    seed: u64,
    duration: f64,
    config: SimConfig,
) -> Result<SimReport, SimError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::InvalidDuration(duration));
    }
    let mut sim = Simulator::new(topology, protocol, config, seed)?;
    for spec in workload {
        sim.add_flow(*spec)?;
    }
    sim.run(duration)
}
