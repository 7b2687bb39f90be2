use allpath::qbd::{
    build_generator, gap_distribution, loss_probability, solve_stationary, utilization, QbdModel,
    SolveMethod,
};
use proptest::prelude::*;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solvers_agree(c1 in 1usize..25, c2 in 1usize..25, log_lambda in -3.0f64..3.0, mu in 0.2f64..5.0) {
        let m = QbdModel::new(c1, c2, 10f64.powf(log_lambda), mu).unwrap();
        let g = build_generator(&m);
        prop_assert!(g.max_row_sum() < 1e-12);
        let q = g.to_dense();
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                if i != j {
                    prop_assert!(q[(i, j)] >= 0.0);
                    // block tridiagonal: no jumps of more than one level
                    let (li, lj) = (i / (c2 + 1), j / (c2 + 1));
                    if li.abs_diff(lj) > 1 {
                        prop_assert_eq!(q[(i, j)], 0.0);
                    }
                }
            }
        }
        let a = solve_stationary(&g, SolveMethod::Dense).unwrap();
        let b = solve_stationary(&g, SolveMethod::BlockTridiagonal).unwrap();
        prop_assert!(a.residual < 1e-10 && b.residual < 1e-10);
        prop_assert!((b.total() - 1.0).abs() < 1e-12);
        prop_assert!(b.pi.iter().all(|p| *p >= 0.0));
        prop_assert!(max_diff(&a.pi, &b.pi) < 1e-10);
        let gap: f64 = gap_distribution(&b).values().sum();
        prop_assert!((gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_capacities_are_symmetric(c in 1usize..25, rho in 0.01f64..60.0) {
        let m = QbdModel::with_load(c, c, rho, 1.0).unwrap();
        let d = solve_stationary(&build_generator(&m), SolveMethod::BlockTridiagonal).unwrap();
        for s1 in 0..=c {
            for s2 in 0..=c {
                prop_assert!((d.get(s1, s2) - d.get(s2, s1)).abs() < 1e-12);
            }
        }
        let (u1, u2) = utilization(&d, &m);
        prop_assert!((u1 - u2).abs() < 1e-12);
        let gap = gap_distribution(&d);
        for k in 1..=c as i64 {
            prop_assert!((gap[&k] - gap[&-k]).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_grows_with_load() {
    let mut last = 0.0;
    for rho in [0.5, 2.0, 8.0, 20.0, 40.0, 80.0] {
        let m = QbdModel::with_load(20, 20, rho, 1.0).unwrap();
        let d = solve_stationary(&build_generator(&m), SolveMethod::Dense).unwrap();
        let lp = loss_probability(&d);
        assert!(lp > last);
        last = lp;
    }
}
