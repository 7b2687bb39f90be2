//! Structural invariants of the flood and of the paths it leaves behind,
//! checked on every flood over many tie-break seeds.

#[path = "common/flood.rs"]
mod flood;

use allpath::protocol::Protocol;
use allpath::simnet::{SimConfig, Simulator};
use allpath::topology::{make_diamond, make_simple_grid, HostId};
use flood::{check_run, check_tree};

#[test]
fn floods_build_trees_without_loops() {
    let topologies = [make_diamond(), make_simple_grid(3, 1).unwrap()];
    for t in &topologies {
        for p in Protocol::ALL {
            for seed in 0..100 {
                check_run(t, p, seed).unwrap_or_else(|e| panic!("{p} seed {seed}: {e}"));
            }
        }
    }
}

#[test]
fn tree_check_rejects_missing_entries() {
    // Before any flow starts nothing is locked, so the check must fail.
    let t = make_diamond();
    let sim = Simulator::new(&t, Protocol::ArpPath, SimConfig::default(), 0).unwrap();
    assert!(check_tree(&sim, Protocol::ArpPath, HostId(1), HostId(2)).is_err());
}

#[test]
fn seeds_change_race_winners() {
    // Equal-latency branches make the race a coin toss settled by the seed.
    let t = make_diamond();
    let paths: std::collections::BTreeSet<_> = (0..40)
        .map(|seed| check_run(&t, Protocol::ArpPath, seed).unwrap())
        .collect();
    assert_eq!(paths.len(), 2, "{paths:?}");
}
