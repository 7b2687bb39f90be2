//! Subcommand implementations. Each returns `(file name, contents)` pairs so
//! that a replay can regenerate exactly the same bytes.

use std::path::Path;

use allpath::balance::{self, Holding, TrafficMix};
use allpath::format::sig12;
use allpath::protocol::Protocol;
use allpath::qbd::{summarize, QbdModel, SolveMethod};
use allpath::scalability::{self, GridFamily};
use allpath::simnet::{all_pairs_workload, random_workload, ScenarioFile, SimConfig};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::CliError;

pub type Outputs = Vec<(String, String)>;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Scenario JSON; overrides every other flag.
    #[arg(long)]
    pub scenario: Option<std::path::PathBuf>,
    /// `grid:N`, `crossed:N`, `line:N`, `diamond` or a topology JSON file.
    #[arg(long, default_value = "grid:3")]
    pub topology: String,
    #[arg(long, default_value = "arp-path")]
    pub protocol: Protocol,
    #[arg(long, default_value_t = 1)]
    pub hosts_per_edge: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Simulated seconds; defaults to one second past the last flow start.
    #[arg(long)]
    pub duration: Option<f64>,
    /// `all-pairs` or `random:N`.
    #[arg(long, default_value = "all-pairs")]
    pub workload: String,
    /// Seconds between consecutive flow starts.
    #[arg(long, default_value_t = 0.25)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1e6)]
    pub flow_size_bits: f64,
    /// Hosts start with every peer in their ARP cache.
    #[arg(long)]
    pub arp_prepopulated: bool,
}

fn is_generator_ref(s: &str) -> bool {
    s == "diamond"
        || ["grid:", "crossed:", "line:"]
            .iter()
            .any(|p| s.starts_with(p))
}

impl SimulateArgs {
    /// Turns the flags (or the scenario file) into a self-contained scenario.
    pub fn resolve(&self) -> Result<ScenarioFile, CliError> {
        if let Some(path) = &self.scenario {
            let mut s = ScenarioFile::load(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            if !is_generator_ref(&s.topology) && Path::new(&s.topology).is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                s.topology = dir.join(&s.topology).display().to_string();
            }
            return Ok(s);
        }
        if !(self.spacing > 0.0 && self.flow_size_bits > 0.0) {
            return Err(CliError::usage(
                "--spacing and --flow-size-bits must be positive",
            ));
        }
        let t = allpath::simnet::parse_topology_ref(&self.topology, self.hosts_per_edge, None)
            .map_err(CliError::usage)?;
        let flows = match self.workload.split_once(':') {
            None if self.workload == "all-pairs" => {
                all_pairs_workload(&t, 0.0, self.spacing, self.flow_size_bits)
            }
            Some(("random", n)) => {
                let n: usize = n.parse().map_err(|_| {
                    CliError::usage(format!("bad flow count in {:?}", self.workload))
                })?;
                random_workload(&t, n, self.spacing, self.flow_size_bits, self.seed)
            }
            _ => {
                return Err(CliError::usage(format!(
                    "unknown workload {:?} (expected all-pairs or random:N)",
                    self.workload
                )))
            }
        };
        let duration = self
            .duration
            .unwrap_or_else(|| flows.last().map_or(0.0, |f| f.start_time) + 1.0);
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(CliError::usage("--duration must be positive"));
        }
        let topology = if is_generator_ref(&self.topology) {
            self.topology.clone()
        } else {
            std::fs::canonicalize(&self.topology)?.display().to_string()
        };
        Ok(ScenarioFile {
            topology,
            hosts_per_edge: self.hosts_per_edge,
            protocol: self.protocol,
            flows,
            seed: self.seed,
            duration,
            config: SimConfig {
                arp_prepopulated: self.arp_prepopulated,
                ..SimConfig::default()
            },
        })
    }
}

pub fn simulate(scenario: &ScenarioFile) -> Result<Outputs, CliError> {
    let (report, dump) = scenario
        .run(None)
        .map_err(|e| CliError::Runtime(e.into()))?;
    Ok(vec![
        ("report.json".into(), report.to_json() + "\n"),
        ("links.csv".into(), report.links_csv()),
        ("tables.csv".into(), report.tables_csv()),
        ("table_dump.csv".into(), dump),
    ])
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Simple,
    Crossed,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScalabilityArgs {
    #[arg(long, value_enum, default_value = "simple")]
    pub grid: Grid,
    /// Inclusive range of grid sizes, `A..B`.
    #[arg(long, default_value = "2..6")]
    pub n_range: String,
    #[arg(long, value_delimiter = ',', default_value = "4,8,12")]
    pub hosts: Vec<u32>,
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let bad = || CliError::usage(format!("bad range {s:?}; expected A..B with A ≤ B"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

pub fn scalability(args: &ScalabilityArgs) -> Result<Outputs, CliError> {
    let range = parse_range(&args.n_range)?;
    let family = match args.grid {
        Grid::Simple => GridFamily::Simple,
        Grid::Crossed => GridFamily::Crossed,
    };
    if *range.start() < 2 && matches!(family, GridFamily::Crossed) {
        return Err(CliError::usage("crossed grids need n ≥ 2"));
    }
    if args.hosts.is_empty() {
        return Err(CliError::usage("--hosts needs at least one value"));
    }
    let rows = scalability::sweep(family, range, &args.hosts).map_err(|e| match e {
        scalability::ScalabilityError::InvalidParams(_)
        | scalability::ScalabilityError::NotGrid(_) => CliError::usage(e),
        other => CliError::Runtime(other.into()),
    })?;
    Ok(vec![(
        "scalability.csv".into(),
        scalability::sweep_csv(&rows),
    )])
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Block,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QbdArgs {
    #[arg(long)]
    pub c1: i64,
    #[arg(long)]
    pub c2: i64,
    /// Offered loads λ/μ.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value = "block")]
    pub method: Method,
}

pub fn qbd(args: &QbdArgs) -> Result<Outputs, CliError> {
    if args.c1 < 1 || args.c2 < 1 {
        return Err(CliError::usage("capacities must be positive"));
    }
    let method = match args.method {
        Method::Dense => SolveMethod::Dense,
        Method::Block => SolveMethod::BlockTridiagonal,
    };
    let mut main = String::from("rho,u1,u2,LP\n");
    let mut gap = String::from("rho,psi,probability\n");
    for &rho in &args.rho {
        let m = QbdModel::with_load(args.c1 as usize, args.c2 as usize, rho, args.mu)
            .map_err(CliError::usage)?;
        let s = summarize(&m, method).map_err(|e| CliError::Runtime(e.into()))?;
        main.push_str(&format!(
            "{},{},{},{}\n",
            sig12(rho),
            sig12(s.u1),
            sig12(s.u2),
            sig12(s.loss)
        ));
        for (psi, p) in &s.gap {
            gap.push_str(&format!("{},{},{}\n", sig12(rho), psi, sig12(*p)));
        }
    }
    Ok(vec![("qbd.csv".into(), main), ("qbd_gap.csv".into(), gap)])
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traffic {
    /// Exponential holding times with mean 1.
    Exp,
    /// Elephant/mice data-center mixture.
    Dcmix,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BalanceArgs {
    #[arg(long, default_value_t = 2)]
    pub paths: usize,
    #[arg(long, default_value_t = 20)]
    pub capacity: i64,
    #[arg(long, value_enum, default_value = "exp")]
    pub traffic: Traffic,
    /// Offered loads λ·E[holding]/ΣC.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Simulated seconds per replication; 1000 for exp, 100 for dcmix.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub elephant_fraction: f64,
}

pub fn balance(args: &BalanceArgs) -> Result<Outputs, CliError> {
    if args.paths < 1 || args.capacity < 1 {
        return Err(CliError::usage("--paths and --capacity must be positive"));
    }
    let (holding, default_duration) = match args.traffic {
        Traffic::Exp => (Holding::Exponential { mean: 1.0 }, 1000.0),
        Traffic::Dcmix => (
            Holding::Mixture(TrafficMix {
                elephant_fraction: args.elephant_fraction,
                ..TrafficMix::default()
            }),
            100.0,
        ),
    };
    let caps = vec![args.capacity as u32; args.paths];
    let rows = balance::sweep(
        &caps,
        &args.rho,
        holding,
        args.duration.unwrap_or(default_duration),
        args.replications,
        args.seed,
    )
    .map_err(CliError::usage)?;
    Ok(vec![("balance.csv".into(), balance::report_csv(&rows))])
}

pub fn replay(m: &Manifest) -> Result<Outputs, CliError> {
    let parse_err = |e: serde_json::Error| CliError::usage(format!("manifest parameters: {e}"));
    match m.subcommand.as_str() {
        "simulate" => simulate(&serde_json::from_value(m.params.clone()).map_err(parse_err)?),
        "scalability" => scalability(&serde_json::from_value(m.params.clone()).map_err(parse_err)?),
        "qbd" => qbd(&serde_json::from_value(m.params.clone()).map_err(parse_err)?),
        "balance" => balance(&serde_json::from_value(m.params.clone()).map_err(parse_err)?),
        other => Err(CliError::usage(format!(
            "cannot replay subcommand {other:?}"
        ))),
    }
}
