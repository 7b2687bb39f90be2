//! Closed-form path and table-size counts for the three protocols.
//!
//! With H active hosts, B_E active edge bridges, b bridges on an average
//! path and L_e extra bridges per destination tree:
//!
//! | protocol    | paths      | table entries |
//! |-------------|------------|---------------|
//! | Flow-Path   | H(H−1)/2   | H(H−1)·b      |
//! | ARP-Path    | H/2        | H(b+L_e)      |
//! | Bridge-Path | B_E/2      | B_E(b+L_e)    |

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use serde::Serialize;
use thiserror::Error;

use crate::format::sig12;
use crate::topology::{
    make_crossed_grid, make_simple_grid, BridgeId, PathCriterion, Topology, TopologyError,
};

#[derive(Debug, Error)]
pub enum ScalabilityError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ratios need nonzero ARP-Path and Bridge-Path tables")]
    EmptyTables,
    #[error("not a corner-edge grid: {0}")]
    NotGrid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalabilityParams {
    pub h: f64,
    pub b_e: f64,
    pub b: f64,
    pub l_e: f64,
    pub f_b: f64,
    pub f_u: f64,
}

impl ScalabilityParams {
    /// Every host talks to every other host: F_B = H(H−1)/2.
    pub fn new(h: f64, b_e: f64, b: f64, l_e: f64) -> Self {
        let f_b = h * (h - 1.0).max(0.0) / 2.0;
        ScalabilityParams {
            h,
            b_e,
            b,
            l_e,
            f_b,
            f_u: 2.0 * f_b,
        }
    }

    pub fn validate(&self) -> Result<(), ScalabilityError> {
        let fields = [
            ("H", self.h),
            ("B_E", self.b_e),
            ("b", self.b),
            ("L_e", self.l_e),
            ("F_B", self.f_b),
            ("F_U", self.f_u),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScalabilityError::InvalidParams(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.b_e > self.h {
            return Err(ScalabilityError::InvalidParams(format!(
                "B_E = {} exceeds H = {}",
                self.b_e, self.h
            )));
        }
        if (self.f_u - 2.0 * self.f_b).abs() > 1e-9 * self.f_u.max(1.0) {
            return Err(ScalabilityError::InvalidParams(
                "F_U must equal 2·F_B".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathCounts {
    pub p_fp: f64,
    pub p_ap: f64,
    pub p_bp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableSizes {
    pub t_fp: f64,
    pub t_ap: f64,
    pub t_bp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratios {
    pub r_fa: f64,
    pub r_ab: f64,
}

pub fn eval_paths(p: &ScalabilityParams) -> Result<PathCounts, ScalabilityError> {
    p.validate()?;
    Ok(PathCounts {
        p_fp: p.h * (p.h - 1.0).max(0.0) / 2.0,
        p_ap: p.h / 2.0,
        p_bp: p.b_e / 2.0,
    })
}

pub fn eval_tables(p: &ScalabilityParams) -> Result<TableSizes, ScalabilityError> {
    p.validate()?;
    Ok(TableSizes {
        t_fp: p.h * (p.h - 1.0).max(0.0) * p.b,
        t_ap: p.h * (p.b + p.l_e),
        t_bp: p.b_e * (p.b + p.l_e),
    })
}

pub fn eval_ratios(p: &ScalabilityParams) -> Result<Ratios, ScalabilityError> {
    let t = eval_tables(p)?;
    if t.t_ap <= 0.0 || t.t_bp <= 0.0 {
        return Err(ScalabilityError::EmptyTables);
    }
    Ok(Ratios {
        r_fa: (p.h - 1.0) * p.b / (p.b + p.l_e),
        r_ab: p.h / p.b_e,
    })
}

/// b and L_e for an n×n grid whose corners are the edge bridges, with H
/// hosts split evenly over the corners.
///
/// b averages the bridge count of the lexicographically smallest minimum-hop
/// path over all ordered pairs of distinct hosts (hosts on the same corner
/// use one bridge). L_e is the mean size of the union of those paths towards
/// one destination, minus b.
pub fn grid_params(t: &Topology, h: u32) -> Result<ScalabilityParams, ScalabilityError> {
    let corners = t.edge_bridges();
    let degenerate = t.bridge_count() == 1 && corners.len() == 1;
    if corners.len() != 4 && !degenerate {
        return Err(ScalabilityError::NotGrid(format!(
            "expected 4 corner edge bridges, found {}",
            corners.len()
        )));
    }
    let e = corners.len() as u32;
    if h == 0 || !h.is_multiple_of(e) {
        return Err(ScalabilityError::InvalidParams(format!(
            "H = {h} must be a positive multiple of {e}"
        )));
    }
    let k = (h / e) as f64;
    let mut len_sum = 0.0;
    let mut union_sum = 0.0;
    for &dst in &corners {
        let mut tree: BTreeSet<BridgeId> = BTreeSet::from([dst]);
        for &src in &corners {
            if src == dst {
                // k(k−1) ordered pairs on the same bridge
                len_sum += k * (k - 1.0);
                continue;
            }
            let path = t.canonical_shortest_path(src, dst)?;
            len_sum += k * k * path.len() as f64;
            tree.extend(path);
        }
        // every host on this corner sees the same tree
        union_sum += k * tree.len() as f64;
    }
    let pairs = h as f64 * (h as f64 - 1.0);
    let b = if pairs > 0.0 { len_sum / pairs } else { 1.0 };
    let l_e = union_sum / h as f64 - b;
    Ok(ScalabilityParams::new(h as f64, e as f64, b, l_e.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFamily {
    Simple,
    Crossed,
}

impl GridFamily {
    pub fn build(self, n: u32) -> Result<Topology, TopologyError> {
        match self {
            GridFamily::Simple => make_simple_grid(n, 0),
            GridFamily::Crossed => make_crossed_grid(n, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u32,
    pub h: u32,
    pub params: ScalabilityParams,
    pub paths: PathCounts,
    pub tables: TableSizes,
    pub ratios: Ratios,
    pub psi_paths: usize,
    pub psi_paths_plus_one: usize,
}

pub fn sweep(
    family: GridFamily,
    n_range: RangeInclusive<u32>,
    hosts: &[u32],
) -> Result<Vec<SweepRow>, ScalabilityError> {
    if n_range.is_empty() {
        return Err(ScalabilityError::InvalidParams("empty n range".into()));
    }
    let mut rows = Vec::new();
    for n in n_range {
        let t = family.build(n)?;
        let psi_paths = t.available_path_count(PathCriterion::ShortestOnly)?;
        let psi_paths_plus_one = t.available_path_count(PathCriterion::ShortestPlusOne)?;
        for &h in hosts {
            let params = grid_params(&t, h)?;
            rows.push(SweepRow {
                n,
                h,
                params,
                paths: eval_paths(&params)?,
                tables: eval_tables(&params)?,
                ratios: eval_ratios(&params)?,
                psi_paths,
                psi_paths_plus_one,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str =
    "n,H,B_E,b,L_e,P_FP,P_AP,P_BP,T_FP,T_AP,T_BP,R_FA,R_AB,psi_paths,psi_paths_plus_one";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let nums = [
            r.params.b_e,
            r.params.b,
            r.params.l_e,
            r.paths.p_fp,
            r.paths.p_ap,
            r.paths.p_bp,
            r.tables.t_fp,
            r.tables.t_ap,
            r.tables.t_bp,
            r.ratios.r_fa,
            r.ratios.r_ab,
        ];
        let nums: Vec<String> = nums.iter().map(|x| sig12(*x)).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            r.h,
            nums.join(","),
            r.psi_paths,
            r.psi_paths_plus_one
        ));
    }
    out
}
