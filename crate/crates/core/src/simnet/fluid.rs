//! Max-min fair rate allocation for fluid flows over directed links.

use std::collections::BTreeMap;

/// Progressive filling. `routes[f]` lists the links of flow `f`; every flow
/// is greedy, so each one ends up limited by its most contended link.
pub fn max_min_rates<L: Ord + Copy>(routes: &[Vec<L>], capacity: &BTreeMap<L, f64>) -> Vec<f64> {
    let mut rate = vec![0.0; routes.len()];
    let mut frozen = vec![false; routes.len()];
    let mut residual: BTreeMap<L, f64> = BTreeMap::new();
    for r in routes {
        for l in r {
            residual.entry(*l).or_insert(capacity[l]);
        }
    }
    // flows with empty routes are unconstrained; they never occur in a
    // network, so give them zero rather than infinity
    for (f, r) in routes.iter().enumerate() {
        if r.is_empty() {
            frozen[f] = true;
        }
    }

    while frozen.iter().any(|z| !z) {
        let mut users: BTreeMap<L, usize> = BTreeMap::new();
        for (f, r) in routes.iter().enumerate() {
            if !frozen[f] {
                for l in r {
                    *users.entry(*l).or_default() += 1;
                }
            }
        }
        let share = users
            .iter()
            .map(|(l, &n)| residual[l] / n as f64)
            .fold(f64::INFINITY, f64::min);
        let bottlenecks: Vec<L> = users
            .iter()
            .filter(|(l, &n)| residual[l] / n as f64 <= share * (1.0 + 1e-12))
            .map(|(l, _)| *l)
            .collect();
        for (f, r) in routes.iter().enumerate() {
            if frozen[f] {
                continue;
            }
            rate[f] += share;
            if r.iter().any(|l| bottlenecks.contains(l)) {
                frozen[f] = true;
            }
        }
        for (l, n) in users {
            let res = residual.get_mut(&l).expect("known link");
            *res = (*res - share * n as f64).max(0.0);
        }
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_link_split_evenly() {
        let cap = BTreeMap::from([(0, 10.0)]);
        let r = max_min_rates(&[vec![0], vec![0]], &cap);
        assert_eq!(r, vec![5.0, 5.0]);
    }

    #[test]
    fn classic_parking_lot() {
        // flow 0 crosses both links, flows 1 and 2 one each
        let cap = BTreeMap::from([(0, 1.0), (1, 2.0)]);
        let r = max_min_rates(&[vec![0, 1], vec![0], vec![1]], &cap);
        assert!((r[0] - 0.5).abs() < 1e-12);
        assert!((r[1] - 0.5).abs() < 1e-12);
        assert!((r[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn never_exceeds_capacity() {
        let cap = BTreeMap::from([(0, 3.0), (1, 1.0), (2, 7.0)]);
        let routes = vec![vec![0, 1], vec![0, 2], vec![2], vec![1, 2], vec![0]];
        let r = max_min_rates(&routes, &cap);
        for (l, c) in &cap {
            let load: f64 = routes
                .iter()
                .zip(&r)
                .filter(|(rt, _)| rt.contains(l))
                .map(|(_, x)| x)
                .sum();
            assert!(load <= c + 1e-9);
        }
    }
}
