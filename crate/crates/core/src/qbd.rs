//! Two-path continuous-time Markov chain for join-the-max-available-capacity
//! scheduling.
//!
//! The state `(s1, s2)` counts free resource units on each path. Flows
//! arrive as a Poisson process with rate λ, take one unit on the path with
//! more free units (ties split evenly) and hold it for an exponential time
//! with rate μ. An arrival that finds `(0, 0)` is lost.
//!
//! Grouping states by `s1` gives a block tridiagonal generator with
//! `C1 + 1` levels of `C2 + 1` phases each. Two independent solvers are
//! provided: a dense LU solve of the whole system and a linear level
//! reduction over the blocks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QbdError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular system at level {0}; the chain is not irreducible")]
    Singular(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QbdModel {
    pub c1: usize,
    pub c2: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl QbdModel {
    pub fn new(c1: usize, c2: usize, lambda: f64, mu: f64) -> Result<Self, QbdError> {
        if c1 < 1 || c2 < 1 {
            return Err(QbdError::InvalidModel(format!(
                "capacities must be at least 1, got ({c1}, {c2})"
            )));
        }
        for (name, v) in [("lambda", lambda), ("mu", mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QbdError::InvalidModel(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(QbdModel { c1, c2, lambda, mu })
    }

    /// Model with offered load ρ = λ/μ.
    pub fn with_load(c1: usize, c2: usize, rho: f64, mu: f64) -> Result<Self, QbdError> {
        QbdModel::new(c1, c2, rho * mu, mu)
    }

    pub fn states(&self) -> usize {
        (self.c1 + 1) * (self.c2 + 1)
    }

    pub fn index(&self, s1: usize, s2: usize) -> usize {
        s1 * (self.c2 + 1) + s2
    }

    /// Arrival rates towards path 1 and path 2 in state `(i, j)`.
    pub fn arrival_split(&self, i: usize, j: usize) -> (f64, f64) {
        let l = self.lambda;
        let to1 = if i == 0 || i < j {
            0.0
        } else if i > j {
            l
        } else {
            l / 2.0
        };
        let to2 = if j == 0 || j < i {
            0.0
        } else if j > i {
            l
        } else {
            l / 2.0
        };
        (to1, to2)
    }
}

/// Block tridiagonal generator. `diag[k]` holds transitions within level k,
/// `up[k]` from level k to k+1 and `down[k]` from level k to k−1
/// (`down[0]` is empty).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub model: QbdModel,
    pub diag: Vec<DMatrix<f64>>,
    pub up: Vec<DMatrix<f64>>,
    pub down: Vec<DMatrix<f64>>,
}

pub fn build_generator(m: &QbdModel) -> Generator {
    let p = m.c2 + 1;
    let mut diag = Vec::with_capacity(m.c1 + 1);
    let mut up = Vec::with_capacity(m.c1);
    let mut down = Vec::with_capacity(m.c1 + 1);
    for i in 0..=m.c1 {
        let mut d = DMatrix::zeros(p, p);
        let mut u = DMatrix::zeros(p, p);
        let mut l = DMatrix::zeros(p, p);
        for j in 0..=m.c2 {
            let (to1, to2) = m.arrival_split(i, j);
            let dep1 = (m.c1 - i) as f64 * m.mu;
            let dep2 = (m.c2 - j) as f64 * m.mu;
            if i > 0 {
                l[(j, j)] = to1;
            }
            if j > 0 {
                d[(j, j - 1)] = to2;
            }
            if i < m.c1 {
                u[(j, j)] = dep1;
            }
            if j < m.c2 {
                d[(j, j + 1)] = dep2;
            }
            d[(j, j)] = -(to1 + to2 + dep1 + dep2);
        }
        diag.push(d);
        if i < m.c1 {
            up.push(u);
        }
        down.push(if i > 0 { l } else { DMatrix::zeros(0, 0) });
    }
    Generator {
        model: *m,
        diag,
        up,
        down,
    }
}

impl Generator {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = &self.model;
        let p = m.c2 + 1;
        let mut q = DMatrix::zeros(m.states(), m.states());
        for k in 0..=m.c1 {
            q.view_mut((k * p, k * p), (p, p)).copy_from(&self.diag[k]);
            if k < m.c1 {
                q.view_mut((k * p, (k + 1) * p), (p, p))
                    .copy_from(&self.up[k]);
            }
            if k > 0 {
                q.view_mut((k * p, (k - 1) * p), (p, p))
                    .copy_from(&self.down[k]);
            }
        }
        q
    }

    /// Largest absolute row sum.
    pub fn max_row_sum(&self) -> f64 {
        let q = self.to_dense();
        q.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Dense,
    BlockTridiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub c1: usize,
    pub c2: usize,
    /// Indexed by `s1 * (c2 + 1) + s2`.
    pub pi: Vec<f64>,
    /// max |(πQ)_i|
    pub residual: f64,
}

impl StationaryDistribution {
    pub fn get(&self, s1: usize, s2: usize) -> f64 {
        self.pi[s1 * (self.c2 + 1) + s2]
    }

    pub fn total(&self) -> f64 {
        self.pi.iter().sum()
    }
}

pub fn solve_stationary(
    g: &Generator,
    method: SolveMethod,
) -> Result<StationaryDistribution, QbdError> {
    let pi = match method {
        SolveMethod::Dense => solve_dense(g)?,
        SolveMethod::BlockTridiagonal => solve_blocks(g)?,
    };
    let q = g.to_dense();
    let row = DVector::from_vec(pi.clone()).transpose() * &q;
    let residual = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(StationaryDistribution {
        c1: g.model.c1,
        c2: g.model.c2,
        pi,
        residual,
    })
}

/// Qᵀπᵀ = 0 with the last equation replaced by Σπ = 1.
fn solve_dense(g: &Generator) -> Result<Vec<f64>, QbdError> {
    let q = g.to_dense();
    let n = q.nrows();
    let mut a = q.transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = a.lu().solve(&rhs).ok_or(QbdError::Singular(0))?;
    Ok(clean(x.iter().copied().collect()))
}

/// Linear level reduction. Starting from the top level,
/// π_{k+1} = π_k R_k with R_k = M_k (−(D_{k+1} + R_{k+1} L_{k+2}))⁻¹,
/// then π_0 solves π_0 (D_0 + R_0 L_1) = 0 and the rest follow forward.
/// Both the inverses and the level-0 solve are done without subtraction;
/// plain pivoted elimination loses the tiny leak rates at light load.
fn solve_blocks(g: &Generator) -> Result<Vec<f64>, QbdError> {
    let c1 = g.model.c1;
    let p = g.model.c2 + 1;
    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    };
    let diag: Vec<Vec<Vec<f64>>> = g.diag.iter().map(to_rows).collect();
    let up: Vec<Vec<Vec<f64>>> = g.up.iter().map(to_rows).collect();
    let down: Vec<Vec<Vec<f64>>> = g.down.iter().map(to_rows).collect();

    // r[k] links level k to level k+1; only off-diagonal entries of `s`
    // are ever read, so no step subtracts
    let mut r: Vec<Vec<Vec<f64>>> = vec![Vec::new(); c1];
    let mut s = diag[c1].clone();
    for k in (0..c1).rev() {
        let leak: Vec<f64> = down[k + 1].iter().map(|row| row.iter().sum()).collect();
        let neg: Vec<Vec<f64>> = s
            .iter()
            .map(|row| row.iter().map(|x| -x).collect())
            .collect();
        r[k] = right_solve_m_matrix(&neg, &leak, &up[k]).ok_or(QbdError::Singular(k + 1))?;
        s = add(&diag[k], &mul(&r[k], &down[k + 1]));
    }

    let mut levels = vec![gth(&s).ok_or(QbdError::Singular(0))?];
    for rk in &r {
        let prev = levels.last().expect("level 0 exists");
        let next = (0..p)
            .map(|j| (0..p).map(|i| prev[i] * rk[i][j]).sum())
            .collect();
        levels.push(next);
    }
    let pi: Vec<f64> = levels.concat();
    let total: f64 = pi.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(QbdError::Singular(0));
    }
    Ok(clean(pi.iter().map(|x| x / total).collect()))
}

/// Solves X·A = B for a nonsingular M-matrix A whose row sums are `leak`
/// (nonnegative). Diagonal entries of A are ignored and rebuilt from the
/// off-diagonals and the leaks, which keeps the elimination free of
/// subtractions even when A is nearly singular.
#[allow(clippy::needless_range_loop)]
fn right_solve_m_matrix(a: &[Vec<f64>], leak: &[f64], b: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut a = a.to_vec();
    let mut leak = leak.to_vec();
    let mut b = b.to_vec();
    for k in (0..n).rev() {
        let d = leak[k] - (0..k).map(|j| a[k][j]).sum::<f64>();
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        a[k][k] = d;
        for row in &mut b {
            let f = row[k] / d;
            for j in 0..k {
                row[j] -= f * a[k][j];
            }
        }
        for i in 0..k {
            let f = a[i][k] / d;
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                if j != i {
                    a[i][j] -= f * a[k][j];
                }
            }
            leak[i] -= f * leak[k];
        }
    }
    let x = b
        .iter()
        .map(|row| {
            let mut x = vec![0.0; n];
            for k in 0..n {
                let acc: f64 = (0..k).map(|i| x[i] * a[i][k]).sum();
                x[k] = (row[k] - acc) / a[k][k];
            }
            x
        })
        .collect();
    Some(x)
}

/// Stationary vector of a small generator by the
/// Grassmann-Taksar-Heyman elimination, which never subtracts.
#[allow(clippy::needless_range_loop)]
fn gth(q: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = q.len();
    let mut a = q.to_vec();
    for k in (1..n).rev() {
        let out: f64 = (0..k).map(|j| a[k][j]).sum();
        if out <= 0.0 {
            return None;
        }
        for i in 0..k {
            a[i][k] /= out;
        }
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a[i][j] += a[i][k] * a[k][j];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[i][k]).sum();
    }
    Some(pi)
}

/// Rounding can leave entries a few ulps below zero.
fn clean(mut pi: Vec<f64>) -> Vec<f64> {
    for x in &mut pi {
        if *x < 0.0 && *x > -1e-14 {
            *x = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..m)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

/// Mean occupied fraction of each path, E[C_k − s_k]/C_k.
pub fn utilization(d: &StationaryDistribution, m: &QbdModel) -> (f64, f64) {
    let mut busy1 = 0.0;
    let mut busy2 = 0.0;
    for s1 in 0..=m.c1 {
        for s2 in 0..=m.c2 {
            let p = d.get(s1, s2);
            busy1 += p * (m.c1 - s1) as f64;
            busy2 += p * (m.c2 - s2) as f64;
        }
    }
    (busy1 / m.c1 as f64, busy2 / m.c2 as f64)
}

/// P(Ψ = ψ) for ψ = s1 − s2 over −C2..=C1.
pub fn gap_distribution(d: &StationaryDistribution) -> BTreeMap<i64, f64> {
    let mut out: BTreeMap<i64, f64> = (-(d.c2 as i64)..=d.c1 as i64).map(|k| (k, 0.0)).collect();
    for s1 in 0..=d.c1 {
        for s2 in 0..=d.c2 {
            *out.get_mut(&(s1 as i64 - s2 as i64)).expect("in range") += d.get(s1, s2);
        }
    }
    out
}

/// Probability that an arrival finds every unit busy (PASTA).
pub fn loss_probability(d: &StationaryDistribution) -> f64 {
    d.get(0, 0)
}

/// Solves a model and collects the headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QbdSummary {
    pub model: QbdModel,
    pub u1: f64,
    pub u2: f64,
    pub loss: f64,
    pub residual: f64,
    pub gap: BTreeMap<i64, f64>,
}

pub fn summarize(m: &QbdModel, method: SolveMethod) -> Result<QbdSummary, QbdError> {
    let d = solve_stationary(&build_generator(m), method)?;
    let (u1, u2) = utilization(&d, m);
    Ok(QbdSummary {
        model: *m,
        u1,
        u2,
        loss: loss_probability(&d),
        residual: d.residual,
        gap: gap_distribution(&d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_follow_the_scheduler() {
        let m = QbdModel::new(3, 3, 2.0, 1.0).unwrap();
        assert_eq!(m.arrival_split(2, 1), (2.0, 0.0));
        assert_eq!(m.arrival_split(2, 2), (1.0, 1.0));
        assert_eq!(m.arrival_split(0, 0), (0.0, 0.0));
        let g = build_generator(&m);
        let q = g.to_dense();
        let idle = m.index(3, 3);
        // nothing to depart from an empty system
        assert_eq!(q[(idle, m.index(3, 3))], -2.0);
        assert!(g.max_row_sum() < 1e-12);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(QbdModel::new(0, 1, 1.0, 1.0).is_err());
        assert!(QbdModel::new(1, 1, 0.0, 1.0).is_err());
        assert!(QbdModel::new(1, 1, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn four_state_chain() {
        // C1=C2=1, λ=μ=1, with a..d the masses of (0,0),(0,1),(1,0),(1,1):
        //   2a = b + c,  2b = a + d/2,  2c = a + d/2,  d = b + c
        // so a = b = c = d/2 = 0.2.
        let m = QbdModel::new(1, 1, 1.0, 1.0).unwrap();
        for method in [SolveMethod::Dense, SolveMethod::BlockTridiagonal] {
            let d = solve_stationary(&build_generator(&m), method).unwrap();
            let want = [0.2, 0.2, 0.2, 0.4];
            for (got, want) in d.pi.iter().zip(want) {
                assert!((got - want).abs() < 1e-14, "{method:?}: {:?}", d.pi);
            }
            assert!((loss_probability(&d) - 0.2).abs() < 1e-14);
            let (u1, u2) = utilization(&d, &m);
            assert!((u1 - 0.4).abs() < 1e-14 && (u2 - 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn solvers_agree_on_asymmetric_model() {
        let m = QbdModel::new(30, 20, 37.0, 1.3).unwrap();
        let g = build_generator(&m);
        let a = solve_stationary(&g, SolveMethod::Dense).unwrap();
        let b = solve_stationary(&g, SolveMethod::BlockTridiagonal).unwrap();
        let diff =
            a.pi.iter()
                .zip(&b.pi)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        assert!(a.residual < 1e-10 && b.residual < 1e-10);
        let gap = gap_distribution(&b);
        assert_eq!(*gap.keys().next().unwrap(), -20);
        assert_eq!(*gap.keys().last().unwrap(), 30);
    }

    #[test]
    fn light_and_heavy_limits() {
        let light =
            summarize(&QbdModel::new(5, 5, 1e-6, 1.0).unwrap(), SolveMethod::Dense).unwrap();
        assert!(light.u1 < 1e-6 && light.loss < 1e-20);
        let d = solve_stationary(
            &build_generator(&QbdModel::new(5, 5, 1e-6, 1.0).unwrap()),
            SolveMethod::Dense,
        )
        .unwrap();
        assert!(d.get(5, 5) > 1.0 - 1e-5);
        let heavy = summarize(
            &QbdModel::new(5, 5, 1e6, 1.0).unwrap(),
            SolveMethod::BlockTridiagonal,
        )
        .unwrap();
        assert!(heavy.loss > 0.99);
    }

    #[test]
    fn utilization_grows_with_load() {
        let mut last = 0.0;
        for k in 1..=30 {
            let m = QbdModel::with_load(10, 10, k as f64, 1.0).unwrap();
            let s = summarize(&m, SolveMethod::BlockTridiagonal).unwrap();
            assert!(s.u1 > last);
            assert!((s.u1 - s.u2).abs() < 1e-12);
            last = s.u1;
        }
    }
}
