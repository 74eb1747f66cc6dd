//! Serializable run summary and the CSV tables written next to it.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use voxstokes::{ETNorms, HorizonAttempt};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Norms {
    pub sup_quarter: f64,
    pub sup_half_weighted: f64,
    pub sup_deriv_weighted: f64,
    pub total: f64,
}

impl From<ETNorms> for Norms {
    fn from(n: ETNorms) -> Self {
        Self {
            sup_quarter: n.sup_quarter,
            sup_half_weighted: n.sup_half_weighted,
            sup_deriv_weighted: n.sup_deriv_weighted,
            total: n.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub epsilon: Option<f64>,
    pub horizon: f64,
    pub alpha_norms: Norms,
    pub remainder_total: f64,
    pub phi_norm: f64,
    pub passed: bool,
}

impl From<&HorizonAttempt> for Attempt {
    fn from(a: &HorizonAttempt) -> Self {
        Self {
            epsilon: a.epsilon,
            horizon: a.horizon,
            alpha_norms: a.alpha_norms.into(),
            remainder_total: a.remainder_total,
            phi_norm: a.phi_norm,
            passed: a.passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSummary {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub cells: usize,
    pub divergence_free_dim: usize,
    pub gradient_rank: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub eigen_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialSummary {
    pub norm: f64,
    pub quarter_norm: f64,
    /// Distance the projection onto divergence-free fields moved the input.
    pub projection_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateSummary {
    pub phi_norm_estimate: f64,
    /// Estimate times safety factor times `|nonlinearity|`.
    pub phi_norm: f64,
    pub alpha_norms: Norms,
    pub passed: bool,
    pub epsilon: Option<f64>,
    pub horizon: f64,
    pub horizon_shrinks: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_distance: f64,
    pub ratios: Vec<f64>,
    /// `4 ‖Φ‖ ‖α‖_{E_T}`
    pub contraction_bound: f64,
    pub fixed_point_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSummary {
    pub norms: Norms,
    pub final_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSummary {
    pub max_residual: f64,
    pub max_relative_divergence: f64,
    pub max_gradient_match: f64,
    pub initial_value_error: f64,
    pub max_energy_imbalance: f64,
    pub max_convective_l32: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub dt: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub runs: Vec<OracleRun>,
    /// `deviation(dt_i) / deviation(dt_{i+1})` for consecutive entries.
    pub convergence_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub version: String,
    pub timestamp: u64,
    pub status: String,
    pub failure: Option<Failure>,
    pub config: ExperimentConfig,
    pub domain: Option<DomainSummary>,
    pub initial: Option<InitialSummary>,
    pub gate: Option<GateSummary>,
    pub picard: Option<PicardSummary>,
    pub solution: Option<SolutionSummary>,
    pub verification: Option<VerificationSummary>,
    pub oracle: Option<OracleSummary>,
}

impl Summary {
    pub fn new(config: ExperimentConfig) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
            status: "running".into(),
            failure: None,
            config,
            domain: None,
            initial: None,
            gate: None,
            picard: None,
            solution: None,
            verification: None,
            oracle: None,
        }
    }
}

/// One row of `norms.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub time: f64,
    pub quarter: f64,
    pub half_weighted: f64,
    pub deriv_weighted: f64,
    pub residual: Option<f64>,
    pub divergence: Option<f64>,
    pub energy_balance: Option<f64>,
}

/// One row of `iterations.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub index: usize,
    pub norms: Norms,
    pub distance: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tables {
    pub nodes: Vec<NodeRow>,
    pub iterations: Vec<IterationRow>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

pub fn write_outputs(dir: &Path, summary: &Summary, tables: &Tables) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;

    let path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(summary).map_err(|e| output_error(&path, e))?;
    json.push('\n');
    std::fs::File::create(&path)
        .and_then(|mut f| f.write_all(json.as_bytes()))
        .map_err(|e| output_error(&path, e))?;

    let path = dir.join("norms.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| output_error(&path, e))?;
    w.write_record(["node", "time", "quarter", "half_weighted", "deriv_weighted", "residual", "divergence", "energy_balance"])
        .map_err(|e| output_error(&path, e))?;
    for (j, r) in tables.nodes.iter().enumerate() {
        w.write_record([
            j.to_string(),
            num(r.time),
            num(r.quarter),
            num(r.half_weighted),
            num(r.deriv_weighted),
            opt(r.residual),
            opt(r.divergence),
            opt(r.energy_balance),
        ])
        .map_err(|e| output_error(&path, e))?;
    }
    w.flush().map_err(|e| output_error(&path, e))?;

    let path = dir.join("iterations.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| output_error(&path, e))?;
    w.write_record(["iteration", "sup_quarter", "sup_half_weighted", "sup_deriv_weighted", "total", "distance", "ratio"])
        .map_err(|e| output_error(&path, e))?;
    for r in &tables.iterations {
        w.write_record([
            r.index.to_string(),
            num(r.norms.sup_quarter),
            num(r.norms.sup_half_weighted),
            num(r.norms.sup_deriv_weighted),
            num(r.norms.total),
            num(r.distance),
            opt(r.ratio),
        ])
        .map_err(|e| output_error(&path, e))?;
    }
    w.flush().map_err(|e| output_error(&path, e))?;
    Ok(())
}
