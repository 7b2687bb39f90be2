//! Flood invariants shared by the core tests and the acceptance suite.

use std::collections::BTreeSet;

use allpath::protocol::{EntryKey, FlowPeer, Mac, Protocol};
use allpath::simnet::{pairs_workload, SimConfig, Simulator, TraceOutcome};
use allpath::topology::{BridgeId, Endpoint, HostId, Topology};

/// Seconds after a flood starts at which its locks are inspected: well past
/// the flood and the reply, well before the lock timer.
const INSPECT_AFTER: f64 = 0.05;

fn belongs_to_flood(key: &EntryKey, p: Protocol, src: HostId, dst: HostId, root: BridgeId) -> bool {
    match (p, key) {
        (Protocol::ArpPath, EntryKey::Host(m)) => *m == Mac::host(src),
        (Protocol::FlowPath, EntryKey::Flow { mac_src, peer }) => {
            *mac_src == Mac::host(src)
                && match peer {
                    FlowPeer::Known(m) => *m == Mac::host(dst),
                    FlowPeer::Unknown { ip_dst, .. } => *ip_dst == dst.ip(),
                }
        }
        (Protocol::BridgePath, EntryKey::Edge(e)) => *e == root,
        _ => false,
    }
}

/// Every bridge except the source edge holds one entry for the flood, and
/// following those entries from anywhere ends at the source edge without
/// revisiting a bridge. Together that makes the entries a spanning tree.
pub fn check_tree(sim: &Simulator, p: Protocol, src: HostId, dst: HostId) -> Result<(), String> {
    let t = sim.topology();
    let root = t.host(src).expect("host").bridge;
    let parent = |b: BridgeId| -> Result<Option<Endpoint>, String> {
        let state = sim.bridge(b).expect("bridge");
        let mine: Vec<_> = state
            .entries()
            .filter(|e| belongs_to_flood(&e.key, p, src, dst, root))
            .collect();
        match mine.as_slice() {
            [] if b == root => Ok(None),
            [] => Err(format!("bridge {b} has no entry for the flood from {src}")),
            [e] => Ok(state.peer(e.port)),
            _ => Err(format!(
                "bridge {b} holds {} entries for one flood",
                mine.len()
            )),
        }
    };
    for start in t.bridges() {
        let mut seen = BTreeSet::from([start]);
        let mut at = start;
        while at != root {
            match parent(at)? {
                Some(Endpoint::Bridge(next)) => {
                    if !seen.insert(next) {
                        return Err(format!("pointer loop through {next} for flood from {src}"));
                    }
                    at = next;
                }
                other => {
                    return Err(format!(
                        "bridge {at} points to {other:?}, not towards {root}"
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Runs one flood per host pair, checks every structural invariant and
/// returns the reply paths.
pub fn check_run(t: &Topology, p: Protocol, seed: u64) -> Result<Vec<Vec<BridgeId>>, String> {
    let flows = pairs_workload(t, 0.0, 0.25, 1e5);
    let mut sim = Simulator::new(t, p, SimConfig::default(), seed).map_err(|e| e.to_string())?;
    for f in &flows {
        sim.add_flow(*f).map_err(|e| e.to_string())?;
    }
    for f in &flows {
        sim.run_until(f.start_time + INSPECT_AFTER);
        check_tree(&sim, p, f.src, f.dst)?;
    }
    sim.run_until(flows.last().map_or(0.0, |f| f.start_time) + 1.0);

    for tr in sim.traces() {
        let forwarded = match tr.outcome {
            TraceOutcome::Delivered(_) => &tr.trace[..],
            _ => &tr.trace[..tr.trace.len().saturating_sub(1)],
        };
        if forwarded.iter().collect::<BTreeSet<_>>().len() != forwarded.len() {
            return Err(format!("frame looped: {:?}", tr.trace));
        }
    }
    if !sim.counters().is_conserved() {
        return Err(format!("frame copies not conserved: {:?}", sim.counters()));
    }
    if sim.exchanges().len() != flows.len() {
        return Err(format!(
            "{} exchanges for {} flows",
            sim.exchanges().len(),
            flows.len()
        ));
    }
    for ex in sim.exchanges() {
        let (Some(req), Some(rep)) = (&ex.request_trace, &ex.reply_trace) else {
            return Err(format!(
                "exchange {}->{} did not complete",
                ex.requester, ex.responder
            ));
        };
        if p == Protocol::FlowPath && rep.iter().rev().ne(req.iter()) {
            return Err(format!("reply {rep:?} is not the reversed request {req:?}"));
        }
    }
    Ok(sim
        .exchanges()
        .iter()
        .filter_map(|e| e.reply_trace.clone())
        .collect())
}
