use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use log::info;
use voxstokes::mild::node_norms;
use voxstokes::{
    alpha_from_modal, assemble_stokes, build_hodge, build_operators, energy_audit, estimate_phi_norm, et_norm,
    fixed_point_residual, imex_oracle, load_mask, picard_iterate, relative_sup_deviation, shrink_horizon,
    smallness_gate, strong_residual, Error as CoreError, IterationLog, PicardConfig, TimeGrid,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::initial::initial_modal;
use crate::report::{
    write_outputs, Attempt, DomainSummary, Failure, GateSummary, InitialSummary, IterationRow, NodeRow, OracleRun,
    OracleSummary, PicardSummary, SolutionSummary, Summary, Tables, VerificationSummary,
};

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub tables: Tables,
    pub error: Option<CliError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, CliError::exit_code)
    }
}

/// Runs the full pipeline and writes `summary.json`, `norms.csv` and
/// `iterations.csv` to the configured output directory, also on failure.
pub fn run_experiment(config: &ExperimentConfig) -> RunOutcome {
    let mut outcome = evaluate(config);
    if let Err(e) = write_outputs(&config.output_dir, &outcome.summary, &outcome.tables) {
        outcome.error.get_or_insert(e);
    }
    outcome
}

/// Runs the pipeline without touching the file system (apart from reading
/// the mask and initial data).
pub fn evaluate(config: &ExperimentConfig) -> RunOutcome {
    let mut summary = Summary::new(config.clone());
    let mut tables = Tables::default();
    let result = config.check().and_then(|()| pipeline(config, &mut summary, &mut tables));
    match &result {
        Ok(()) => summary.status = "ok".into(),
        Err(e) => {
            summary.status = "failed".into();
            summary.failure = Some(Failure { kind: e.kind().into(), exit_code: e.exit_code(), message: e.to_string() });
        }
    }
    RunOutcome { summary, tables, error: result.err() }
}

fn record_iterations(log: &IterationLog, phi_norm: f64, summary: &mut Summary, tables: &mut Tables) {
    tables.iterations = log
        .steps
        .iter()
        .map(|s| IterationRow { index: s.index, norms: s.norms.into(), distance: s.distance, ratio: s.ratio })
        .collect();
    summary.picard = Some(PicardSummary {
        iterations: log.iterations(),
        converged: log.converged,
        final_distance: log.steps.last().map_or(0.0, |s| s.distance),
        ratios: log.ratios().collect(),
        contraction_bound: 4.0 * phi_norm * log.alpha_norm.total,
        fixed_point_residual: None,
    });
}

fn pipeline(config: &ExperimentConfig, summary: &mut Summary, tables: &mut Tables) -> Result<(), CliError> {
    let mask_error = |source| CliError::Mask { path: config.mask.clone(), source };
    let file = File::open(&config.mask).map_err(|e| mask_error(e.into()))?;
    let mask = Arc::new(load_mask(BufReader::new(file)).map_err(mask_error)?);
    info!("mask {:?}: {} cells", mask.dims(), mask.occupied_count());

    let ops = Arc::new(build_operators(mask.clone()));
    let hodge = Arc::new(build_hodge(ops)?);
    let spec = assemble_stokes(hodge.clone(), config.stokes.delta)?;
    summary.domain = Some(DomainSummary {
        dims: mask.dims(),
        spacing: mask.spacing(),
        cells: mask.occupied_count(),
        divergence_free_dim: hodge.dim(),
        gradient_rank: hodge.gradient_rank(),
        lambda_min: spec.lambda_min(),
        lambda_max: spec.lambda_max(),
        eigen_residual: spec.eigen_residual(),
    });

    let (a0, shift) = initial_modal(&spec, &config.initial, config.seed)?;
    summary.initial = Some(InitialSummary {
        norm: a0.norm(),
        quarter_norm: spec.apply_power(0.25, false, &a0)?.norm(),
        projection_shift: shift,
    });

    let template = TimeGrid::graded(config.time.horizon, config.time.intervals, config.time.quad_order)?;
    let c = config.picard.nonlinearity;
    let scale = config.phi.safety * c.abs();
    let phi_estimate = estimate_phi_norm(&spec, &template, config.phi.trials, config.seed)?;
    let phi_norm = scale * phi_estimate;
    let alpha_norms = et_norm(&spec, &alpha_from_modal(&spec, &a0, &template));
    let mut gate = GateSummary {
        phi_norm_estimate: phi_estimate,
        phi_norm,
        alpha_norms: alpha_norms.into(),
        passed: smallness_gate(&alpha_norms, phi_norm),
        epsilon: None,
        horizon: template.horizon(),
        horizon_shrinks: Vec::new(),
    };
    info!("gate: alpha {:e} phi {:e} pass {}", alpha_norms.total, phi_norm, gate.passed);

    let (a_start, grid, gate_phi) = if gate.passed {
        summary.gate = Some(gate);
        (a0, template, phi_norm)
    } else {
        let mut estimate = |g: &TimeGrid| estimate_phi_norm(&spec, g, config.phi.trials, config.seed).map(|p| scale * p);
        match shrink_horizon(&spec, &a0, &mut estimate, &template, &config.shrink.eps_schedule, config.shrink.max_halvings) {
            Ok(choice) => {
                gate.horizon_shrinks = choice.attempts.iter().map(Attempt::from).collect();
                gate.alpha_norms = choice.alpha_norms.into();
                gate.phi_norm = choice.phi_norm;
                gate.passed = true;
                gate.epsilon = choice.epsilon;
                gate.horizon = choice.grid.horizon();
                summary.gate = Some(gate);
                (choice.u0_smooth, choice.grid, choice.phi_norm)
            }
            Err(CoreError::GateUnreachable { best }) => {
                gate.horizon_shrinks = best.iter().map(Attempt::from).collect();
                summary.gate = Some(gate);
                return Err(CoreError::GateUnreachable { best }.into());
            }
            Err(e) => return Err(e.into()),
        }
    };

    let alpha = alpha_from_modal(&spec, &a_start, &grid);
    let picard = PicardConfig { tol: config.picard.tol, max_iter: config.picard.max_iter, nonlinearity: c };
    let (u, log) = match picard_iterate(&spec, &alpha, alpha.clone(), &picard) {
        Ok(pair) => pair,
        Err(CoreError::Divergence { log }) => {
            record_iterations(&log, gate_phi, summary, tables);
            return Err(CoreError::Divergence { log }.into());
        }
        Err(e) => return Err(e.into()),
    };
    record_iterations(&log, gate_phi, summary, tables);
    if !log.converged {
        return Err(CliError::NotConverged { iterations: log.iterations() });
    }
    if let Some(p) = summary.picard.as_mut() {
        p.fixed_point_residual = Some(fixed_point_residual(&spec, &u, &alpha, c)?);
    }

    summary.solution = Some(SolutionSummary {
        norms: et_norm(&spec, &u).into(),
        final_l2: u.values().last().map_or(0.0, |a| a.norm()),
    });

    let u0 = spec.lift(&a_start)?;
    let report = strong_residual(&spec, &u, &u0, c)?;
    let balance = energy_audit(&spec, &u)?;
    tables.nodes = node_norms(&spec, &u)
        .into_iter()
        .enumerate()
        .map(|(j, n)| NodeRow {
            time: n.time,
            quarter: n.quarter,
            half_weighted: n.half_weighted,
            deriv_weighted: n.deriv_weighted,
            residual: j.checked_sub(1).map(|i| report.nodes[i].residual),
            divergence: j.checked_sub(1).map(|i| report.nodes[i].divergence),
            energy_balance: Some(balance[j]),
        })
        .collect();
    summary.verification = Some(VerificationSummary {
        max_residual: report.max_residual(),
        max_relative_divergence: report.max_relative_divergence(),
        max_gradient_match: report.max_gradient_match(),
        initial_value_error: report.initial_value_error,
        max_energy_imbalance: balance.iter().fold(0.0, |m, b| m.max(b.abs())),
        max_convective_l32: report.nodes.iter().fold(0.0, |m, n| m.max(n.convective_l32)),
    });

    if !config.oracle.dt.is_empty() {
        let mut runs = Vec::new();
        for &dt in &config.oracle.dt {
            let oracle = imex_oracle(&spec, &u0, &grid, dt, c);
            let deviation = match oracle {
                Ok(o) => relative_sup_deviation(&u, &o)?,
                Err(e) => {
                    summary.oracle = Some(OracleSummary { runs, convergence_ratios: Vec::new() });
                    return Err(e.into());
                }
            };
            info!("oracle dt {dt:e}: deviation {deviation:e}");
            runs.push(OracleRun { dt, deviation });
        }
        let convergence_ratios = runs.windows(2).map(|w| w[0].deviation / w[1].deviation).collect();
        summary.oracle = Some(OracleSummary { runs, convergence_ratios });
    }
    Ok(())
}
