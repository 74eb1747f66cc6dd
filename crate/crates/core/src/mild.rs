//! Mild solutions `u = α + Φ(u, u)` in the weighted space `E_T`.
//!
//! Trajectories are sampled on a time grid graded as `t_j = T (j/N)²` and
//! stored as modal coordinates (coefficients in the orthonormal Stokes
//! eigenbasis), so every semigroup and fractional power is a diagonal
//! multiplier. Between nodes a trajectory is the piecewise-linear
//! interpolant of its samples; the same holds for its derivative samples.
//!
//! `Φ(u, v)(t) = ∫₀ᵗ e^{-(t-s)A} f(s) ds` with `f = -½ P((u·∇)v + (v·∇)u)`.
//! Values at the nodes come from the exact recurrence
//! `Φ(t_{j+1}) = e^{-(t_{j+1}-t_j)A} Φ(t_j) + ∫_{t_j}^{t_{j+1}} e^{-(t_{j+1}-s)A} f(s) ds`.
//! Derivatives use the split at `t/2`:
//!
//! ```text
//! Φ'(t) = e^{-(t/2)A} f(t/2) + ∫_{t/2}^{t} e^{-(t-r)A} f'(r) dr - A ∫₀^{t/2} e^{-(t-s)A} f(s) ds
//! ```
//!
//! so that `f'` is only ever evaluated away from `s = 0`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::nonlinear::symmetric_advection_raw;
use crate::quadrature::PanelRule;
use crate::stokes::StokesSpectrum;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    quad_order: usize,
}

impl TimeGrid {
    /// `t_j = T (j/N)²`, `j = 0..=N`.
    pub fn graded(horizon: f64, intervals: usize, quad_order: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let n = intervals as f64;
        let nodes = (0..=intervals).map(|j| horizon * (j as f64 / n).powi(2)).collect();
        Self::from_nodes(nodes, quad_order)
    }

    pub fn from_nodes(nodes: Vec<f64>, quad_order: usize) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidArgument("a time grid needs at least two intervals".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0] || !w[1].is_finite()) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        if quad_order < 2 {
            return Err(Error::InvalidArgument(format!("quadrature order must be at least 2, got {quad_order}")));
        }
        Ok(Self { nodes, quad_order })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("nonempty grid")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    /// Same node pattern stretched to a new horizon.
    pub fn rescaled(&self, horizon: f64) -> Self {
        let factor = horizon / self.horizon();
        let mut nodes: Vec<f64> = self.nodes.iter().map(|t| t * factor).collect();
        *nodes.last_mut().unwrap() = horizon;
        Self { nodes, quad_order: self.quad_order }
    }

    pub fn with_quad_order(&self, quad_order: usize) -> Self {
        Self { nodes: self.nodes.clone(), quad_order }
    }

    /// Inserts `((√t_j + √t_{j+1})/2)²` between neighbours; on a graded grid
    /// this is the graded grid with twice the intervals.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push((0.5 * (w[0].sqrt() + w[1].sqrt())).powi(2));
        }
        nodes.push(self.horizon());
        Self { nodes, quad_order: self.quad_order }
    }

    /// Index `i` with `t_i ≤ s < t_{i+1}`, clamped to the last interval.
    fn interval_of(&self, s: f64) -> usize {
        let i = self.nodes.partition_point(|&t| t <= s);
        i.saturating_sub(1).min(self.intervals() - 1)
    }
}

/// A sampled trajectory in modal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MildTrajectory {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
    derivatives: Vec<DVector<f64>>,
}

impl MildTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<DVector<f64>>, derivatives: Vec<DVector<f64>>) -> Result<Self> {
        let len = grid.nodes().len();
        if values.len() != len || derivatives.len() != len {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs {len} samples, got {} values and {} derivatives",
                values.len(),
                derivatives.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().chain(&derivatives).any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument("samples have inconsistent dimension".into()));
        }
        Ok(Self { grid, values, derivatives })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        let len = grid.nodes().len();
        Self { grid, values: vec![DVector::zeros(dim); len], derivatives: vec![DVector::zeros(dim); len] }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn derivatives(&self) -> &[DVector<f64>] {
        &self.derivatives
    }

    /// `a · self + b · other`
    pub fn combine(&self, a: f64, b: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.dim() != other.dim() {
            return Err(Error::GridMismatch);
        }
        let mix = |x: &[DVector<f64>], y: &[DVector<f64>]| x.iter().zip(y).map(|(p, q)| p * a + q * b).collect();
        Ok(Self {
            grid: self.grid.clone(),
            values: mix(&self.values, &other.values),
            derivatives: mix(&self.derivatives, &other.derivatives),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, -1.0, other)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * a).collect(),
            derivatives: self.derivatives.iter().map(|v| v * a).collect(),
        }
    }
}

/// The three terms of the `E_T` norm evaluated on the sample nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ETNorms {
    /// `sup_j ‖A^{1/4} u(t_j)‖`
    pub sup_quarter: f64,
    /// `sup_{t_j > 0} t_j^{1/4} ‖A^{1/2} u(t_j)‖`
    pub sup_half_weighted: f64,
    /// `sup_{t_j > 0} t_j ‖A^{1/4} u'(t_j)‖`
    pub sup_deriv_weighted: f64,
    pub total: f64,
}

/// Per-node values of the three `E_T` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeNorms {
    pub time: f64,
    pub quarter: f64,
    pub half_weighted: f64,
    pub deriv_weighted: f64,
}

pub fn node_norms(spec: &StokesSpectrum, traj: &MildTrajectory) -> Vec<NodeNorms> {
    let quarter = spec.eigenvalues().map(|l| l.powf(0.25));
    let half = spec.eigenvalues().map(f64::sqrt);
    traj.grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &t)| NodeNorms {
            time: t,
            quarter: traj.values[j].component_mul(&quarter).norm(),
            half_weighted: if j == 0 { 0.0 } else { t.powf(0.25) * traj.values[j].component_mul(&half).norm() },
            deriv_weighted: if j == 0 { 0.0 } else { t * traj.derivatives[j].component_mul(&quarter).norm() },
        })
        .collect()
}

pub fn et_norm(spec: &StokesSpectrum, traj: &MildTrajectory) -> ETNorms {
    let nodes = node_norms(spec, traj);
    let sup = |f: fn(&NodeNorms) -> f64| nodes.iter().map(f).fold(0.0, f64::max);
    let sup_quarter = sup(|n| n.quarter);
    let sup_half_weighted = sup(|n| n.half_weighted);
    let sup_deriv_weighted = sup(|n| n.deriv_weighted);
    ETNorms {
        sup_quarter,
        sup_half_weighted,
        sup_deriv_weighted,
        total: sup_quarter + sup_half_weighted + sup_deriv_weighted,
    }
}

/// `α(t) = e^{-tA} a₀`, `α'(t) = -A e^{-tA} a₀` for modal initial data.
pub fn alpha_from_modal(spec: &StokesSpectrum, a0: &DVector<f64>, grid: &TimeGrid) -> MildTrajectory {
    let lambda = spec.eigenvalues();
    let values: Vec<DVector<f64>> = grid
        .nodes()
        .iter()
        .map(|&t| a0.zip_map(lambda, |a, l| a * (-t * l).exp()))
        .collect();
    let derivatives = values.iter().map(|v| -v.component_mul(lambda)).collect();
    MildTrajectory { grid: grid.clone(), values, derivatives }
}

/// `α` for an initial field, which is projected onto the divergence-free
/// subspace first.
pub fn alpha_trajectory(spec: &StokesSpectrum, u0: &VectorField, grid: &TimeGrid) -> Result<MildTrajectory> {
    let a0 = spec.modal(u0)?;
    let kept = spec.lift(&a0)?;
    let moved = kept.sub(u0)?.norm();
    if moved > 1e-12 * u0.norm() {
        log::warn!("initial field is not divergence-free; projection moved it by {moved:e}");
    }
    Ok(alpha_from_modal(spec, &a0, grid))
}

struct Path<'a> {
    grid: &'a TimeGrid,
    values: Vec<DVector<f64>>,
    derivatives: Vec<DVector<f64>>,
}

impl<'a> Path<'a> {
    fn lift(spec: &StokesSpectrum, traj: &'a MildTrajectory) -> Self {
        Self {
            grid: &traj.grid,
            values: traj.values.iter().map(|a| spec.lift_raw(a)).collect(),
            derivatives: traj.derivatives.iter().map(|a| spec.lift_raw(a)).collect(),
        }
    }

    fn interpolate(&self, samples: &[DVector<f64>], s: f64) -> DVector<f64> {
        let i = self.grid.interval_of(s);
        let (t0, t1) = (self.grid.nodes[i], self.grid.nodes[i + 1]);
        let theta = (s - t0) / (t1 - t0);
        &samples[i] * (1.0 - theta) + &samples[i + 1] * theta
    }

    fn value(&self, s: f64) -> DVector<f64> {
        self.interpolate(&self.values, s)
    }

    fn derivative(&self, s: f64) -> DVector<f64> {
        self.interpolate(&self.derivatives, s)
    }
}

/// Pair of interpolated paths producing the projected forcing and its derivative.
struct Forcing<'a> {
    spec: &'a StokesSpectrum,
    u: Path<'a>,
    v: Option<Path<'a>>,
}

impl Forcing<'_> {
    fn v(&self) -> &Path<'_> {
        self.v.as_ref().unwrap_or(&self.u)
    }

    fn value(&self, s: f64) -> DVector<f64> {
        let ops = self.spec.hodge().operators();
        let raw = symmetric_advection_raw(ops, &self.u.value(s), &self.v().value(s));
        self.spec.modal_raw(&raw) * -0.5
    }

    fn derivative(&self, s: f64) -> DVector<f64> {
        let ops = self.spec.hodge().operators();
        let (u, du) = (self.u.value(s), self.u.derivative(s));
        let (v, dv) = (self.v().value(s), self.v().derivative(s));
        let raw = symmetric_advection_raw(ops, &du, &v) + symmetric_advection_raw(ops, &u, &dv);
        self.spec.modal_raw(&raw) * -0.5
    }
}

fn decay(lambda: &DVector<f64>, t: f64) -> DVector<f64> {
    lambda.map(|l| (-t * l).exp())
}

/// `∫_a^b e^{-(b-s)A} g(s) ds` with the sin² panel rule.
fn panel_integral(
    lambda: &DVector<f64>,
    rule: &PanelRule,
    a: f64,
    b: f64,
    g: &(dyn Fn(f64) -> DVector<f64> + Sync),
) -> DVector<f64> {
    let mut acc = DVector::zeros(lambda.len());
    if b <= a {
        return acc;
    }
    for (s, w) in rule.points(a, b) {
        let gs = g(s);
        acc += decay(lambda, b - s).component_mul(&gs) * w;
    }
    acc
}

fn convolve_nodes(lambda: &DVector<f64>, grid: &TimeGrid, panels: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(grid.nodes().len());
    out.push(DVector::zeros(lambda.len()));
    for (i, w) in grid.nodes().windows(2).enumerate() {
        let next = decay(lambda, w[1] - w[0]).component_mul(&out[i]) + &panels[i];
        out.push(next);
    }
    out
}

/// Node values of `∫₀ᵗ e^{-(t-s)A} g(s) ds` for an arbitrary modal forcing `g`.
pub fn convolve(
    spec: &StokesSpectrum,
    grid: &TimeGrid,
    g: impl Fn(f64) -> DVector<f64> + Sync,
) -> Result<Vec<DVector<f64>>> {
    let rule = PanelRule::new(grid.quad_order())?;
    let lambda = spec.eigenvalues();
    let panels: Vec<DVector<f64>> = grid
        .nodes()
        .par_windows(2)
        .map(|w| panel_integral(lambda, &rule, w[0], w[1], &g))
        .collect();
    Ok(convolve_nodes(lambda, grid, &panels))
}

/// The bilinear map `Φ(u, v)`.
pub fn phi(spec: &StokesSpectrum, u: &MildTrajectory, v: &MildTrajectory) -> Result<MildTrajectory> {
    if u.grid != v.grid || u.dim() != spec.dim() || v.dim() != spec.dim() {
        return Err(Error::GridMismatch);
    }
    let forcing = Forcing {
        spec,
        u: Path::lift(spec, u),
        v: if std::ptr::eq(u, v) { None } else { Some(Path::lift(spec, v)) },
    };
    phi_with(spec, &u.grid, &forcing)
}

fn phi_with(spec: &StokesSpectrum, grid: &TimeGrid, forcing: &Forcing<'_>) -> Result<MildTrajectory> {
    let rule = PanelRule::new(grid.quad_order())?;
    let lambda = spec.eigenvalues();
    let nodes = grid.nodes();
    let f = |s: f64| forcing.value(s);
    let df = |s: f64| forcing.derivative(s);

    let (panels_f, panels_df): (Vec<_>, Vec<_>) = nodes
        .par_windows(2)
        .map(|w| (panel_integral(lambda, &rule, w[0], w[1], &f), panel_integral(lambda, &rule, w[0], w[1], &df)))
        .unzip();
    let values = convolve_nodes(lambda, grid, &panels_f);

    let mut derivatives: Vec<DVector<f64>> = (1..nodes.len())
        .into_par_iter()
        .map(|j| {
            let t = nodes[j];
            let tau = 0.5 * t;
            let k = grid.interval_of(tau);
            let psi = decay(lambda, tau - nodes[k]).component_mul(&values[k])
                + panel_integral(lambda, &rule, nodes[k], tau, &f);
            let early = decay(lambda, tau).component_mul(&psi);
            let mut late = decay(lambda, t - nodes[k + 1])
                .component_mul(&panel_integral(lambda, &rule, tau, nodes[k + 1], &df));
            for i in k + 1..j {
                late += decay(lambda, t - nodes[i + 1]).component_mul(&panels_df[i]);
            }
            decay(lambda, tau).component_mul(&f(tau)) + late - lambda.component_mul(&early)
        })
        .collect();
    derivatives.insert(0, f(0.0));

    MildTrajectory::new(grid.clone(), values, derivatives)
}

/// Randomized lower estimate of `sup ‖Φ(u, v)‖ / (‖u‖ ‖v‖)` over `E_T`.
///
/// Each trial draws two free evolutions `e^{-tA} w` with Gaussian modal
/// coefficients damped by a random power `λ^{-γ}`, `γ ∈ [0, 3/4]`,
/// normalizes them in `E_T`, and records the ratio. The result is the
/// running maximum, so more trials never lower it.
pub fn estimate_phi_norm(spec: &StokesSpectrum, grid: &TimeGrid, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let gamma: f64 = rng.gen_range(0.0..0.75);
        let w = DVector::from_fn(spec.dim(), |k, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * spec.eigenvalues()[k].powf(-gamma)
        });
        let traj = alpha_from_modal(spec, &w, grid);
        let norm = et_norm(spec, &traj).total;
        traj.scale(1.0 / norm)
    };
    let mut best = 0.0f64;
    for _ in 0..trials {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let ratio = et_norm(spec, &phi(spec, &u, &v)?).total;
        best = best.max(ratio);
    }
    Ok(best)
}

/// `‖α‖_{E_T} < 1 / (4 ‖Φ‖)`; `phi_norm` must be positive.
pub fn smallness_gate(alpha_norms: &ETNorms, phi_norm: f64) -> bool {
    alpha_norms.total < 1.0 / (4.0 * phi_norm)
}

/// One `(ε, T)` candidate tried by [`shrink_horizon`].
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonAttempt {
    /// `None` for the unsmoothed initial datum.
    pub epsilon: Option<f64>,
    pub horizon: f64,
    /// `‖α_ε‖_{E_T}` with `α_ε(t) = e^{-tA} e^{-εA} u₀`.
    pub alpha_norms: ETNorms,
    /// `‖e^{-·A}(u₀ - e^{-εA}u₀)‖_{E_T}`, the part of the original datum dropped by smoothing.
    pub remainder_total: f64,
    pub phi_norm: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct HorizonChoice {
    /// Modal coordinates of the initial datum to solve with.
    pub u0_smooth: DVector<f64>,
    pub epsilon: Option<f64>,
    pub grid: TimeGrid,
    pub alpha_norms: ETNorms,
    pub phi_norm: f64,
    pub attempts: Vec<HorizonAttempt>,
}

/// Finds smoothed data `e^{-εA}u₀` and a dyadic horizon `T / 2^k` on which the
/// smallness gate passes.
///
/// `phi_norm_at` supplies the `‖Φ‖` used by the gate for each candidate grid;
/// pass a constant closure to keep a single template estimate. For every ε in
/// order, horizons are tried from the template down to `max_halvings`
/// halvings and the first passing pair is returned. When the template itself
/// passes, the datum is returned unchanged.
pub fn shrink_horizon(
    spec: &StokesSpectrum,
    a0: &DVector<f64>,
    phi_norm_at: &mut dyn FnMut(&TimeGrid) -> Result<f64>,
    template: &TimeGrid,
    eps_schedule: &[f64],
    max_halvings: usize,
) -> Result<HorizonChoice> {
    let mut attempts = Vec::new();
    let alpha = et_norm(spec, &alpha_from_modal(spec, a0, template));
    let phi_norm = phi_norm_at(template)?;
    let passed = smallness_gate(&alpha, phi_norm);
    attempts.push(HorizonAttempt {
        epsilon: None,
        horizon: template.horizon(),
        alpha_norms: alpha,
        remainder_total: 0.0,
        phi_norm,
        passed,
    });
    if passed {
        return Ok(HorizonChoice {
            u0_smooth: a0.clone(),
            epsilon: None,
            grid: template.clone(),
            alpha_norms: alpha,
            phi_norm,
            attempts,
        });
    }

    for &eps in eps_schedule {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing time must be nonnegative, got {eps}")));
        }
        let smooth = spec.apply_semigroup(eps, a0)?;
        let dropped = a0 - &smooth;
        let mut horizon = template.horizon();
        for _ in 0..=max_halvings {
            let grid = template.rescaled(horizon);
            let alpha = et_norm(spec, &alpha_from_modal(spec, &smooth, &grid));
            let remainder_total = et_norm(spec, &alpha_from_modal(spec, &dropped, &grid)).total;
            let phi_norm = phi_norm_at(&grid)?;
            let passed = smallness_gate(&alpha, phi_norm);
            log::debug!("shrink: eps {eps:e} T {horizon:e} alpha {:e} phi {phi_norm:e} pass {passed}", alpha.total);
            attempts.push(HorizonAttempt {
                epsilon: Some(eps),
                horizon,
                alpha_norms: alpha,
                remainder_total,
                phi_norm,
                passed,
            });
            if passed {
                return Ok(HorizonChoice { u0_smooth: smooth, epsilon: Some(eps), grid, alpha_norms: alpha, phi_norm, attempts });
            }
            horizon *= 0.5;
        }
    }
    let best = attempts
        .iter()
        .min_by(|a, b| (a.alpha_norms.total * a.phi_norm).total_cmp(&(b.alpha_norms.total * b.phi_norm)))
        .cloned();
    Err(Error::GateUnreachable { best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Multiplies the bilinear term; 0 gives the linear Stokes problem.
    pub nonlinearity: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, nonlinearity: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStep {
    pub index: usize,
    /// `‖v_n‖_{E_T}`
    pub norms: ETNorms,
    /// `‖v_{n+1} - v_n‖_{E_T}`
    pub distance: f64,
    /// `distance_n / distance_{n-1}`, for `n ≥ 1`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationLog {
    pub steps: Vec<IterationStep>,
    pub alpha_norm: ETNorms,
    pub phi_norm_estimate: Option<f64>,
    /// Estimate times the safety factor; the value the gate used.
    pub phi_norm: Option<f64>,
    pub smallness_ok: Option<bool>,
    pub horizon_shrinks: Vec<HorizonAttempt>,
    pub converged: bool,
}

impl IterationLog {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().filter_map(|s| s.ratio)
    }
}

const NON_CONTRACTING_STEPS: usize = 3;

/// `v_{n+1} = α + c Φ(v_n, v_n)` starting from `start`, `c` the nonlinearity scale.
pub fn picard_iterate(
    spec: &StokesSpectrum,
    alpha: &MildTrajectory,
    start: MildTrajectory,
    config: &PicardConfig,
) -> Result<(MildTrajectory, IterationLog)> {
    let mut log = IterationLog { alpha_norm: et_norm(spec, alpha), ..Default::default() };
    let mut current = start;
    let mut previous_distance: Option<f64> = None;
    let mut streak = 0;
    for index in 0..config.max_iter {
        let next = if config.nonlinearity == 0.0 {
            alpha.clone()
        } else {
            alpha.combine(1.0, config.nonlinearity, &phi(spec, &current, &current)?)?
        };
        let distance = et_norm(spec, &next.sub(&current)?).total;
        let ratio = previous_distance.filter(|&d| d > 0.0).map(|d| distance / d);
        log.steps.push(IterationStep { index, norms: et_norm(spec, &current), distance, ratio });
        log::debug!("picard {index}: distance {distance:e} ratio {ratio:?}");
        current = next;
        if distance <= config.tol {
            log.converged = true;
            return Ok((current, log));
        }
        streak = if ratio.is_some_and(|r| r >= 1.0) { streak + 1 } else { 0 };
        if streak >= NON_CONTRACTING_STEPS {
            return Err(Error::Divergence { log: Box::new(log) });
        }
        previous_distance = Some(distance);
    }
    Ok((current, log))
}

/// Picard iteration from `v₀ = α` for the initial field `u0`.
pub fn picard_solve(
    spec: &StokesSpectrum,
    u0: &VectorField,
    grid: &TimeGrid,
    config: &PicardConfig,
) -> Result<(MildTrajectory, IterationLog)> {
    let alpha = alpha_trajectory(spec, u0, grid)?;
    picard_iterate(spec, &alpha, alpha.clone(), config)
}

/// `‖u - α - c Φ(u, u)‖_{E_T}`
pub fn fixed_point_residual(
    spec: &StokesSpectrum,
    u: &MildTrajectory,
    alpha: &MildTrajectory,
    nonlinearity: f64,
) -> Result<f64> {
    let image = if nonlinearity == 0.0 {
        alpha.clone()
    } else {
        alpha.combine(1.0, nonlinearity, &phi(spec, u, u)?)?
    };
    Ok(et_norm(spec, &u.sub(&image)?).total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_operators, DomainMask};
    use crate::hodge::build_hodge;
    use crate::stokes::assemble_stokes;
    use std::sync::Arc;

    fn spectrum() -> StokesSpectrum {
        let mask = DomainMask::full([3, 3, 2], 1.0).unwrap();
        let ops = Arc::new(build_operators(Arc::new(mask)));
        assemble_stokes(Arc::new(build_hodge(ops).unwrap()), 0.0).unwrap()
    }

    fn smooth_data(spec: &StokesSpectrum, amplitude: f64) -> DVector<f64> {
        DVector::from_fn(spec.dim(), |k, _| amplitude * ((k + 1) as f64).cos() / spec.eigenvalues()[k])
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::graded(0.0, 4, 8).is_err());
        assert!(TimeGrid::graded(1.0, 1, 8).is_err());
        assert!(TimeGrid::graded(1.0, 4, 1).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.2, 0.3], 4).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.2, 0.2], 4).is_err());
        let g = TimeGrid::graded(2.0, 4, 8).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.125, 0.5, 1.125, 2.0]);
    }

    #[test]
    fn refining_a_graded_grid_doubles_it() {
        let g = TimeGrid::graded(3.0, 5, 6).unwrap();
        let fine = TimeGrid::graded(3.0, 10, 6).unwrap();
        for (a, b) in g.refined().nodes().iter().zip(fine.nodes()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interval_lookup_clamps() {
        let g = TimeGrid::graded(1.0, 4, 4).unwrap();
        assert_eq!(g.interval_of(0.0), 0);
        assert_eq!(g.interval_of(0.0625), 1);
        assert_eq!(g.interval_of(0.07), 1);
        assert_eq!(g.interval_of(1.0), 3);
    }

    #[test]
    fn zero_trajectory_has_zero_norm_and_image() {
        let spec = spectrum();
        let grid = TimeGrid::graded(1.0, 6, 6).unwrap();
        let z = MildTrajectory::zeros(grid, spec.dim());
        assert_eq!(et_norm(&spec, &z), ETNorms::default());
        let image = phi(&spec, &z, &z).unwrap();
        assert!(image.values().iter().chain(image.derivatives()).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_mode_alpha_norms() {
        let spec = spectrum();
        let k = 3;
        let lambda = spec.eigenvalues()[k];
        let mut a0 = DVector::zeros(spec.dim());
        a0[k] = 1.0;
        let grid = TimeGrid::graded(4.0, 40, 6).unwrap();
        let n = et_norm(&spec, &alpha_from_modal(&spec, &a0, &grid));
        let q = lambda.powf(0.25);
        assert!((n.sup_quarter - q).abs() < 1e-14 * q);
        // sup_t t^{1/4} λ^{1/2} e^{-tλ} = λ^{1/4} (4e)^{-1/4}; sup_t t λ^{5/4} e^{-tλ} = λ^{1/4}/e.
        assert!(n.sup_half_weighted <= q * (4.0 * std::f64::consts::E).powf(-0.25) * (1.0 + 1e-12));
        assert!(n.sup_deriv_weighted <= q / std::f64::consts::E * (1.0 + 1e-12));
        assert!(n.sup_deriv_weighted > 0.9 * q / std::f64::consts::E);
    }

    #[test]
    fn et_norm_matches_direct_sum() {
        let spec = spectrum();
        let grid = TimeGrid::graded(1.0, 8, 6).unwrap();
        let traj = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let n = et_norm(&spec, &traj);
        let mut want = [0.0f64; 3];
        for (j, &t) in grid.nodes().iter().enumerate() {
            let mut q = 0.0;
            let mut h = 0.0;
            let mut d = 0.0;
            for k in 0..spec.dim() {
                let l = spec.eigenvalues()[k];
                q += l.sqrt() * traj.values()[j][k].powi(2);
                h += l * traj.values()[j][k].powi(2);
                d += l.sqrt() * traj.derivatives()[j][k].powi(2);
            }
            want[0] = want[0].max(q.sqrt());
            if j > 0 {
                want[1] = want[1].max(t.powf(0.25) * h.sqrt());
                want[2] = want[2].max(t * d.sqrt());
            }
        }
        assert!((n.sup_quarter - want[0]).abs() < 1e-12 * want[0]);
        assert!((n.sup_half_weighted - want[1]).abs() < 1e-12 * want[1]);
        assert!((n.sup_deriv_weighted - want[2]).abs() < 1e-12 * want[2]);
        assert!((n.total - want.iter().sum::<f64>()).abs() < 1e-12 * n.total);
    }

    #[test]
    fn constant_forcing_convolution_is_exact() {
        let spec = spectrum();
        let c = DVector::from_fn(spec.dim(), |k, _| 1.0 + k as f64);
        let error = |order| {
            let grid = TimeGrid::graded(1.0, 16, order).unwrap();
            let got = convolve(&spec, &grid, |_| c.clone()).unwrap();
            let mut worst = 0.0f64;
            for (j, &t) in grid.nodes().iter().enumerate().skip(1) {
                for k in 0..spec.dim() {
                    let l = spec.eigenvalues()[k];
                    let want = c[k] * -(-t * l).exp_m1() / l;
                    worst = worst.max((got[j][k] - want).abs() / want.abs());
                }
            }
            worst
        };
        let (coarse, fine) = (error(4), error(8));
        assert!(fine <= 1e-6, "{fine:e}");
        assert!(fine < coarse);
    }

    #[test]
    fn phi_with_zero_argument_vanishes() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let v = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let z = MildTrajectory::zeros(grid, spec.dim());
        assert_eq!(et_norm(&spec, &phi(&spec, &z, &v).unwrap()).total, 0.0);
    }

    #[test]
    fn phi_is_symmetric() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let u = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let w = DVector::from_fn(spec.dim(), |k, _| ((2 * k) as f64).sin());
        let v = alpha_from_modal(&spec, &w, &grid);
        let uv = phi(&spec, &u, &v).unwrap();
        let vu = phi(&spec, &v, &u).unwrap();
        assert!(et_norm(&spec, &uv.sub(&vu).unwrap()).total < 1e-13 * et_norm(&spec, &uv).total);
    }

    #[test]
    fn phi_is_bilinear() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let u = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let v = alpha_from_modal(&spec, &DVector::from_fn(spec.dim(), |k, _| (k as f64).sin()), &grid);
        let lhs = phi(&spec, &u.scale(2.0), &v.scale(-3.0)).unwrap();
        let rhs = phi(&spec, &u, &v).unwrap().scale(-6.0);
        assert!(et_norm(&spec, &lhs.sub(&rhs).unwrap()).total < 1e-12 * et_norm(&spec, &lhs).total);
    }

    #[test]
    fn phi_derivative_matches_difference_quotient() {
        let spec = spectrum();
        let grid = TimeGrid::graded(1.0, 64, 8).unwrap();
        let u = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let image = phi(&spec, &u, &u).unwrap();
        let t = grid.nodes();
        for j in [16, 32, 48] {
            let fd = (&image.values()[j + 1] - &image.values()[j - 1]) / (t[j + 1] - t[j - 1]);
            let err = (&fd - &image.derivatives()[j]).norm() / image.derivatives()[j].norm();
            assert!(err < 2e-2, "node {j}: {err}");
        }
    }

    #[test]
    fn phi_estimate_is_deterministic_and_monotone() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let a = estimate_phi_norm(&spec, &grid, 3, 7).unwrap();
        assert_eq!(a, estimate_phi_norm(&spec, &grid, 3, 7).unwrap());
        assert!(estimate_phi_norm(&spec, &grid, 6, 7).unwrap() >= a);
        assert!(a > 0.0);
        assert!(estimate_phi_norm(&spec, &grid, 0, 7).is_err());
    }

    #[test]
    fn gate_boundary() {
        let at = |total| ETNorms { total, ..Default::default() };
        assert!(!smallness_gate(&at(0.125), 2.0));
        assert!(smallness_gate(&at(0.1), 2.0));
        assert!(!smallness_gate(&at(0.2), 2.0));
    }

    #[test]
    fn small_data_keeps_the_template_horizon() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let a0 = smooth_data(&spec, 1e-4);
        let choice = shrink_horizon(&spec, &a0, &mut |_| Ok(1.0), &grid, &[], 4).unwrap();
        assert_eq!(choice.epsilon, None);
        assert_eq!(choice.grid, grid);
        assert_eq!(choice.u0_smooth, a0);
        assert_eq!(choice.attempts.len(), 1);
    }

    #[test]
    fn large_data_without_schedule_is_unreachable() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let a0 = smooth_data(&spec, 100.0);
        match shrink_horizon(&spec, &a0, &mut |_| Ok(1.0), &grid, &[], 4) {
            Err(Error::GateUnreachable { best: Some(best) }) => assert!(!best.passed),
            other => panic!("expected GateUnreachable, got {other:?}"),
        }
    }

    #[test]
    fn smoothing_rescues_the_gate() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let a0 = smooth_data(&spec, 1.0);
        let norm = et_norm(&spec, &alpha_from_modal(&spec, &a0, &grid)).total;
        // With ‖Φ‖ proportional to T, halving eventually passes.
        let phi_at = |g: &TimeGrid| Ok(1.0 / (2.0 * norm) * g.horizon() / 0.5 * 4.0);
        let choice = shrink_horizon(&spec, &a0, &mut { phi_at }, &grid, &[0.0, 0.1], 12).unwrap();
        assert!(choice.epsilon.is_some());
        assert!(choice.grid.horizon() < 0.5);
        assert!(smallness_gate(&choice.alpha_norms, choice.phi_norm));
        assert!(choice.attempts.iter().rev().skip(1).all(|a| !a.passed));
    }

    #[test]
    fn picard_from_zero_data() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let alpha = MildTrajectory::zeros(grid, spec.dim());
        let (u, log) = picard_iterate(&spec, &alpha, alpha.clone(), &PicardConfig::default()).unwrap();
        assert!(log.converged);
        assert_eq!(log.iterations(), 1);
        assert_eq!(u, alpha);
    }

    #[test]
    fn linear_problem_returns_alpha() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let alpha = alpha_from_modal(&spec, &smooth_data(&spec, 1.0), &grid);
        let config = PicardConfig { nonlinearity: 0.0, ..Default::default() };
        let zero = MildTrajectory::zeros(grid, spec.dim());
        let (u, log) = picard_iterate(&spec, &alpha, zero, &config).unwrap();
        assert!(log.converged);
        assert_eq!(log.iterations(), 2);
        assert_eq!(u, alpha);
        assert_eq!(fixed_point_residual(&spec, &u, &alpha, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn small_data_converges_to_a_fixed_point() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 8, 6).unwrap();
        let alpha = alpha_from_modal(&spec, &smooth_data(&spec, 0.05), &grid);
        let (u, log) = picard_iterate(&spec, &alpha, alpha.clone(), &PicardConfig::default()).unwrap();
        assert!(log.converged);
        assert!(log.ratios().all(|r| r < 0.5));
        assert!(fixed_point_residual(&spec, &u, &alpha, 1.0).unwrap() < 1e-9);
        // A different start reaches the same point.
        let zero = MildTrajectory::zeros(grid, spec.dim());
        let (w, _) = picard_iterate(&spec, &alpha, zero, &PicardConfig::default()).unwrap();
        assert!(et_norm(&spec, &u.sub(&w).unwrap()).total < 1e-9);
    }

    #[test]
    fn iteration_limit_reports_not_converged() {
        let spec = spectrum();
        let grid = TimeGrid::graded(0.5, 6, 6).unwrap();
        let alpha = alpha_from_modal(&spec, &smooth_data(&spec, 0.05), &grid);
        let config = PicardConfig { max_iter: 2, tol: 0.0, ..Default::default() };
        let (_, log) = picard_iterate(&spec, &alpha, alpha.clone(), &config).unwrap();
        assert!(!log.converged);
        assert_eq!(log.iterations(), 2);
    }

    #[test]
    fn large_data_diverges() {
        let spec = spectrum();
        let grid = TimeGrid::graded(2.0, 6, 6).unwrap();
        let alpha = alpha_from_modal(&spec, &smooth_data(&spec, 200.0), &grid);
        match picard_iterate(&spec, &alpha, alpha.clone(), &PicardConfig::default()) {
            Err(Error::Divergence { log }) => {
                assert!(!log.converged);
                let ratios: Vec<f64> = log.ratios().collect();
                assert!(ratios.iter().rev().take(3).all(|&r| r >= 1.0));
            }
            other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l.steps.len())),
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let spec = spectrum();
        let a = MildTrajectory::zeros(TimeGrid::graded(1.0, 4, 4).unwrap(), spec.dim());
        let b = MildTrajectory::zeros(TimeGrid::graded(2.0, 4, 4).unwrap(), spec.dim());
        assert!(matches!(phi(&spec, &a, &b), Err(Error::GridMismatch)));
        assert!(matches!(a.sub(&b), Err(Error::GridMismatch)));
    }
}
