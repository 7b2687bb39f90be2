//! Flow-level simulation of join-the-max-available-capacity over N parallel
//! paths. Every flow holds one resource unit on its path for its holding
//! time; a flow that finds every path full is lost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::format::sig12;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fairness index of an all-zero utilization vector")]
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Path(usize),
    Loss,
}

/// Picks the path with the most free units, uniformly among ties.
pub fn schedule<R: Rng + ?Sized>(available: &[u32], rng: &mut R) -> Decision {
    let best = available.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return Decision::Loss;
    }
    let ties = available.iter().filter(|&&s| s == best).count();
    let pick = if ties == 1 {
        0
    } else {
        rng.random_range(0..ties)
    };
    let idx = available
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == best)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("pick < ties");
    Decision::Path(idx)
}

/// Data-center flow mixture: a few fixed-size elephants among many mice
/// with uniformly distributed sizes, all served at `line_rate_bps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrafficMix {
    pub elephant_fraction: f64,
    pub elephant_size_bits: f64,
    pub mice_low_bits: f64,
    pub mice_high_bits: f64,
    pub line_rate_bps: f64,
}

impl Default for TrafficMix {
    fn default() -> Self {
        TrafficMix {
            elephant_fraction: 0.01,
            elephant_size_bits: 100e6 * 8.0,
            mice_low_bits: 2e3 * 8.0,
            mice_high_bits: 50e3 * 8.0,
            line_rate_bps: 1e9,
        }
    }
}

impl TrafficMix {
    fn validate(&self) -> Result<(), BalanceError> {
        if !(0.0..=1.0).contains(&self.elephant_fraction) {
            return Err(BalanceError::InvalidConfig(
                "elephant_fraction outside [0, 1]".into(),
            ));
        }
        if !(self.mice_low_bits > 0.0 && self.mice_low_bits <= self.mice_high_bits) {
            return Err(BalanceError::InvalidConfig(
                "mice size range must satisfy 0 < low ≤ high".into(),
            ));
        }
        if !(self.elephant_size_bits > 0.0 && self.line_rate_bps > 0.0) {
            return Err(BalanceError::InvalidConfig(
                "sizes and line rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Holding {
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    Mixture(TrafficMix),
}

impl Holding {
    pub fn mean(&self) -> f64 {
        match *self {
            Holding::Exponential { mean } => mean,
            Holding::Deterministic { value } => value,
            Holding::Mixture(m) => {
                let mice = (m.mice_low_bits + m.mice_high_bits) / 2.0;
                (m.elephant_fraction * m.elephant_size_bits + (1.0 - m.elephant_fraction) * mice)
                    / m.line_rate_bps
            }
        }
    }

    fn validate(&self) -> Result<(), BalanceError> {
        match *self {
            Holding::Exponential { mean } | Holding::Deterministic { value: mean } => {
                if !(mean > 0.0 && mean.is_finite()) {
                    return Err(BalanceError::InvalidConfig(
                        "holding time must be positive".into(),
                    ));
                }
                Ok(())
            }
            Holding::Mixture(m) => m.validate(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Holding::Exponential { mean } => {
                Exp::new(1.0 / mean).expect("positive rate").sample(rng)
            }
            Holding::Deterministic { value } => value,
            Holding::Mixture(m) => {
                let bits = if rng.random_bool(m.elephant_fraction) {
                    m.elephant_size_bits
                } else {
                    rng.random_range(m.mice_low_bits..=m.mice_high_bits)
                };
                bits / m.line_rate_bps
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Workload {
    Poisson {
        rate: f64,
        holding: Holding,
    },
    /// Fixed `(arrival_time, holding_time)` pairs, sorted by arrival.
    Trace {
        flows: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceConfig {
    pub capacities: Vec<u32>,
    pub workload: Workload,
    pub duration: f64,
    /// Leading fraction of each replication excluded from the statistics.
    pub warmup_fraction: f64,
    pub replications: usize,
    pub seed: u64,
}

impl BalanceConfig {
    fn validate(&self) -> Result<(), BalanceError> {
        if self.capacities.is_empty() || self.capacities.contains(&0) {
            return Err(BalanceError::InvalidConfig(
                "need at least one path, all capacities positive".into(),
            ));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(BalanceError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(BalanceError::InvalidConfig(
                "warmup_fraction must be in [0, 1)".into(),
            ));
        }
        if self.replications == 0 {
            return Err(BalanceError::InvalidConfig(
                "need at least one replication".into(),
            ));
        }
        match &self.workload {
            Workload::Poisson { rate, holding } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(BalanceError::InvalidConfig(
                        "arrival rate must be positive".into(),
                    ));
                }
                holding.validate()
            }
            Workload::Trace { flows } => {
                if flows.iter().any(|&(a, h)| !(a >= 0.0 && h >= 0.0)) {
                    return Err(BalanceError::InvalidConfig(
                        "trace times must be nonnegative".into(),
                    ));
                }
                if flows.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(BalanceError::InvalidConfig(
                        "trace must be sorted by arrival".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Mean over replications with a two-sided 95% Student-t interval; the
/// interval is absent with a single replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Estimate {
                mean,
                std_err: None,
                ci_low: None,
                ci_high: None,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("valid degrees of freedom")
            .inverse_cdf(0.975);
        Estimate {
            mean,
            std_err: Some(se),
            ci_low: Some(mean - t * se),
            ci_high: Some(mean + t * se),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match (self.ci_low, self.ci_high) {
            (Some(lo), Some(hi)) => lo <= x && x <= hi,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub utilization: Vec<f64>,
    pub arrivals: u64,
    pub lost: u64,
}

impl ReplicationResult {
    pub fn loss(&self) -> f64 {
        if self.arrivals == 0 {
            0.0
        } else {
            self.lost as f64 / self.arrivals as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub utilization: Vec<Estimate>,
    pub loss: Estimate,
    /// Jain index of the mean utilizations, with the interval taken over
    /// per-replication indices.
    pub fairness: Estimate,
    pub replications: Vec<ReplicationResult>,
}

/// (Σu)² / (N·Σu²).
pub fn jain_index(u: &[f64]) -> Result<f64, BalanceError> {
    if u.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(BalanceError::InvalidConfig(
            "utilizations must be finite and nonnegative".into(),
        ));
    }
    let sq: f64 = u.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Err(BalanceError::AllZero);
    }
    let s: f64 = u.iter().sum();
    Ok(s * s / (u.len() as f64 * sq))
}

#[derive(PartialEq)]
struct Departure {
    time: f64,
    path: usize,
}

impl Eq for Departure {}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.path.cmp(&self.path))
    }
}

fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One replication. Panics if the scheduler ever picks a path with fewer
/// free units than another, or if a path's free units leave `[0, C]`.
pub fn run_replication(cfg: &BalanceConfig, stream: u64) -> ReplicationResult {
    let mut rng = rep_rng(cfg.seed, stream);
    let caps = &cfg.capacities;
    let mut free: Vec<u32> = caps.clone();
    let mut departures = BinaryHeap::new();
    let warmup = cfg.warmup_fraction * cfg.duration;
    let mut busy_area = vec![0.0; caps.len()];
    let mut clock = 0.0_f64;
    let (mut arrivals, mut lost) = (0_u64, 0_u64);

    let mut advance = |to: f64, free: &[u32], clock: &mut f64| {
        let from = clock.max(warmup);
        if to > from {
            for (k, a) in busy_area.iter_mut().enumerate() {
                *a += (caps[k] - free[k]) as f64 * (to - from);
            }
        }
        *clock = to;
    };

    let mut trace = match &cfg.workload {
        Workload::Trace { flows } => Some(flows.iter().copied()),
        Workload::Poisson { .. } => None,
    };
    let mut next_arrival = |rng: &mut ChaCha8Rng, now: f64| -> Option<(f64, f64)> {
        match &cfg.workload {
            Workload::Poisson { rate, holding } => {
                let gap = Exp::new(*rate).expect("positive rate").sample(rng);
                Some((now + gap, holding.sample(rng)))
            }
            Workload::Trace { .. } => trace.as_mut().and_then(Iterator::next),
        }
    };

    let mut pending = next_arrival(&mut rng, 0.0);
    loop {
        let next_dep = departures.peek().map(|d: &Departure| d.time);
        let next_arr = pending.map(|(t, _)| t);
        let (t, is_arrival) = match (next_arr, next_dep) {
            (Some(a), Some(d)) if d <= a => (d, false),
            (Some(a), _) => (a, true),
            (None, Some(d)) => (d, false),
            (None, None) => break,
        };
        if t > cfg.duration {
            break;
        }
        advance(t, &free, &mut clock);
        if is_arrival {
            let (_, hold) = pending.expect("arrival pending");
            let counted = t >= warmup;
            arrivals += counted as u64;
            match schedule(&free, &mut rng) {
                Decision::Loss => lost += counted as u64,
                Decision::Path(k) => {
                    assert!(
                        free.iter().all(|&s| free[k] >= s),
                        "scheduler chose a non-maximal path"
                    );
                    free[k] -= 1;
                    departures.push(Departure {
                        time: t + hold,
                        path: k,
                    });
                }
            }
            pending = next_arrival(&mut rng, t);
        } else {
            let d = departures.pop().expect("departure pending");
            free[d.path] += 1;
            assert!(free[d.path] <= caps[d.path], "free units exceed capacity");
        }
    }
    advance(cfg.duration, &free, &mut clock);

    let span = cfg.duration - warmup;
    let utilization = busy_area
        .iter()
        .zip(caps)
        .map(|(a, &c)| a / (c as f64 * span))
        .collect();
    ReplicationResult {
        utilization,
        arrivals,
        lost,
    }
}

pub fn simulate(cfg: &BalanceConfig) -> Result<BalanceReport, BalanceError> {
    simulate_streams(cfg, 0)
}

fn simulate_streams(cfg: &BalanceConfig, stream_base: u64) -> Result<BalanceReport, BalanceError> {
    cfg.validate()?;
    let reps: Vec<ReplicationResult> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(cfg, stream_base + r))
        .collect();
    Ok(aggregate(reps))
}

fn aggregate(reps: Vec<ReplicationResult>) -> BalanceReport {
    let paths = reps[0].utilization.len();
    let utilization = (0..paths)
        .map(|k| Estimate::from_samples(&reps.iter().map(|r| r.utilization[k]).collect::<Vec<_>>()))
        .collect::<Vec<_>>();
    let loss =
        Estimate::from_samples(&reps.iter().map(ReplicationResult::loss).collect::<Vec<_>>());
    let per_rep_fi: Vec<f64> = reps
        .iter()
        .map(|r| jain_index(&r.utilization).unwrap_or(1.0))
        .collect();
    let means: Vec<f64> = utilization.iter().map(|e| e.mean).collect();
    let mut fairness = Estimate::from_samples(&per_rep_fi);
    fairness.mean = jain_index(&means).unwrap_or(1.0);
    BalanceReport {
        utilization,
        loss,
        fairness,
        replications: reps,
    }
}

/// Arrival rate that offers load ρ = λ·E[holding] / ΣC.
pub fn arrival_rate_for(rho: f64, capacities: &[u32], holding: &Holding) -> f64 {
    let total: u32 = capacities.iter().sum();
    rho * total as f64 / holding.mean()
}

/// Sweeps offered load with Poisson arrivals and the given holding law.
/// Each load point uses its own block of random streams.
pub fn sweep(
    capacities: &[u32],
    rhos: &[f64],
    holding: Holding,
    duration: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<(f64, BalanceReport)>, BalanceError> {
    if rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(BalanceError::InvalidConfig("loads must be positive".into()));
    }
    rhos.iter()
        .enumerate()
        .map(|(i, &rho)| {
            let cfg = BalanceConfig {
                capacities: capacities.to_vec(),
                workload: Workload::Poisson {
                    rate: arrival_rate_for(rho, capacities, &holding),
                    holding,
                },
                duration,
                warmup_fraction: 0.1,
                replications,
                seed,
            };
            simulate_streams(&cfg, (i as u64) << 32).map(|r| (rho, r))
        })
        .collect()
}

/// The data-center scenario: N equal paths under the elephant/mice mixture.
pub fn simulate_dc(
    paths: usize,
    capacity: u32,
    rhos: &[f64],
    mix: TrafficMix,
    duration: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<(f64, BalanceReport)>, BalanceError> {
    sweep(
        &vec![capacity; paths],
        rhos,
        Holding::Mixture(mix),
        duration,
        replications,
        seed,
    )
}

pub const CSV_HEADER: &str = "rho,path_id,u_i,LP,FI,ci_low,ci_high";

/// One row per load point and path; interval columns are empty with a
/// single replication.
pub fn report_csv(rows: &[(f64, BalanceReport)]) -> String {
    let opt = |x: Option<f64>| x.map(sig12).unwrap_or_default();
    let mut out = format!("{CSV_HEADER}\n");
    for (rho, r) in rows {
        for (k, u) in r.utilization.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                sig12(*rho),
                k + 1,
                sig12(u.mean),
                sig12(r.loss.mean),
                sig12(r.fairness.mean),
                opt(u.ci_low),
                opt(u.ci_high)
            ));
        }
    }
    out
}

/// Erlang-B blocking for `servers` units at offered load `a` (Erlangs).
pub fn erlang_b(servers: u32, a: f64) -> f64 {
    (1..=servers).fold(1.0, |b, k| a * b / (k as f64 + a * b))
}
