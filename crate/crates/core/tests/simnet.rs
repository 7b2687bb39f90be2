use std::collections::{BTreeMap, BTreeSet};

use allpath::protocol::{EntryKey, FlowPeer, FrameKind, Mac, Protocol};
use allpath::simnet::{
    measure_empirical_tables, run_scenario, FlowSpec, FlowStatus, MeasureOptions, TraceOutcome,
};
use allpath::topology::{make_diamond, make_line, make_simple_grid, BridgeId, HostId, Topology};

fn flow(src: u32, dst: u32, size_bits: f64, start_time: f64) -> FlowSpec {
    FlowSpec {
        src: HostId(src),
        dst: HostId(dst),
        size_bits,
        start_time,
    }
}

/// Union of reply-trace bridge sets per forwarding key, derived only from the
/// recorded exchanges and the host placement.
fn trace_oracle(
    t: &Topology,
    protocol: Protocol,
    exchanges: &[allpath::simnet::Exchange],
) -> usize {
    let edge: BTreeMap<HostId, BridgeId> = t.hosts().map(|h| (h.host, h.bridge)).collect();
    let mut union: BTreeMap<EntryKey, BTreeSet<BridgeId>> = BTreeMap::new();
    for ex in exchanges {
        let trace = ex.reply_trace.as_ref().expect("exchange completed");
        let (a, b) = (ex.requester, ex.responder);
        let keys = match protocol {
            Protocol::ArpPath => vec![EntryKey::Host(Mac::host(a)), EntryKey::Host(Mac::host(b))],
            Protocol::FlowPath => vec![
                EntryKey::Flow {
                    mac_src: Mac::host(a),
                    peer: FlowPeer::Known(Mac::host(b)),
                },
                EntryKey::Flow {
                    mac_src: Mac::host(b),
                    peer: FlowPeer::Known(Mac::host(a)),
                },
            ],
            Protocol::BridgePath => {
                if edge[&a] == edge[&b] {
                    continue;
                }
                vec![EntryKey::Edge(edge[&a]), EntryKey::Edge(edge[&b])]
            }
        };
        for k in keys {
            union.entry(k).or_default().extend(trace.iter().copied());
        }
    }
    union.values().map(BTreeSet::len).sum()
}

#[test]
fn three_bridge_line_tables() {
    let t = make_line(3, 1).unwrap();
    for p in Protocol::ALL {
        let m = measure_empirical_tables(&t, p, &MeasureOptions::default()).unwrap();
        assert_eq!(m.total_entries, 6, "{p}");
        assert_eq!(m.b, 3.0, "{p}");
        assert_eq!(m.l_e, 0.0, "{p}");
        assert_eq!(m.keys, 2, "{p}");
        assert_eq!(trace_oracle(&t, p, &m.report.exchanges), 6, "{p}");
    }
}

#[test]
fn grid_tables_match_trace_oracle() {
    for n in [2, 3] {
        for per_corner in [1, 2] {
            let t = make_simple_grid(n, per_corner).unwrap();
            for p in Protocol::ALL {
                let m = measure_empirical_tables(&t, p, &MeasureOptions::default()).unwrap();
                assert_eq!(
                    m.total_entries,
                    trace_oracle(&t, p, &m.report.exchanges),
                    "n={n} H={} {p}",
                    t.host_count()
                );
                assert!(m.report.counters.is_conserved());
            }
        }
    }
}

#[test]
fn new_flow_avoids_loaded_branch() {
    // diamond: 1-2-3 and 1-4-3, host 1 at bridge 1, host 2 at bridge 3.
    // Add a third host at bridge 2 to load the 2-3 link only.
    let mut file = make_diamond().to_file();
    file.hosts.push(allpath::topology::HostRecord {
        id: HostId(3),
        bridge: BridgeId(2),
        bandwidth_bps: None,
        prop_delay_s: None,
    });
    file.bridges
        .iter_mut()
        .filter(|b| b.id == BridgeId(2))
        .for_each(|b| b.role = allpath::topology::Role::Edge);
    let t = Topology::from_file(file).unwrap();
    let flows = [flow(3, 2, 1e10, 0.0), flow(1, 2, 1e6, 0.5)];
    for p in Protocol::ALL {
        let r = run_scenario(&t, p, &flows, 9, 1.0).unwrap();
        assert!(matches!(r.flows[0].status, FlowStatus::Active), "{p}");
        let ex = r
            .exchanges
            .iter()
            .find(|e| e.requester == HostId(1))
            .expect("exchange for the new flow");
        let trace = ex.request_trace.as_ref().unwrap();
        assert_eq!(trace, &vec![BridgeId(1), BridgeId(4), BridgeId(3)], "{p}");
        assert_eq!(
            r.flows[1].path,
            vec![BridgeId(1), BridgeId(4), BridgeId(3)],
            "{p}"
        );
    }
}

#[test]
fn same_seed_same_report() {
    let t = make_simple_grid(3, 2).unwrap();
    let flows: Vec<_> = (0..6)
        .map(|i| flow(1 + i % 8, 1 + (i * 3 + 1) % 8, 5e7, 0.01 * i as f64))
        .collect();
    for p in Protocol::ALL {
        let a = run_scenario(&t, p, &flows, 42, 2.0).unwrap().to_json();
        let b = run_scenario(&t, p, &flows, 42, 2.0).unwrap().to_json();
        assert_eq!(a, b);
    }
}

#[test]
fn every_frame_copy_is_accounted_for() {
    let t = make_simple_grid(3, 1).unwrap();
    let flows = [
        flow(1, 4, 1e8, 0.0),
        flow(2, 3, 1e8, 0.0),
        flow(4, 1, 1e8, 0.3),
    ];
    for p in Protocol::ALL {
        let r = run_scenario(&t, p, &flows, 5, 0.0001).unwrap();
        assert!(r.counters.is_conserved());
        let r = run_scenario(&t, p, &flows, 5, 3.0).unwrap();
        assert!(r.counters.is_conserved());
        assert_eq!(r.counters.in_flight, 0);
        for tr in &r.traces {
            let unique: BTreeSet<_> = tr.trace.iter().collect();
            assert_eq!(unique.len(), tr.trace.len(), "loop in {:?}", tr.trace);
            if tr.kind == FrameKind::UnicastData {
                assert!(matches!(tr.outcome, TraceOutcome::Delivered(_)));
            }
        }
        for l in &r.links {
            assert!(l.utilization.iter().all(|u| (0.0..=1.0).contains(u)));
        }
    }
}

#[test]
fn measured_tables_match_closed_forms() {
    use allpath::scalability::{eval_tables, ScalabilityParams};
    for n in [2, 3] {
        for per_corner in [1, 2] {
            let t = make_simple_grid(n, per_corner).unwrap();
            for p in Protocol::ALL {
                let m = measure_empirical_tables(&t, p, &MeasureOptions::default()).unwrap();
                let params =
                    ScalabilityParams::new(m.hosts as f64, m.edge_bridges as f64, m.b, m.l_e);
                let want = eval_tables(&params).unwrap();
                let want = match p {
                    Protocol::ArpPath => want.t_ap,
                    Protocol::FlowPath => want.t_fp,
                    Protocol::BridgePath => want.t_bp,
                };
                assert!(
                    (m.total_entries as f64 - want).abs() < 1e-9 * want.max(1.0),
                    "n={n} H={} {p}: tables {} vs formula {want} (b={}, L_e={})",
                    m.hosts,
                    m.total_entries,
                    m.b,
                    m.l_e
                );
            }
        }
    }
}
