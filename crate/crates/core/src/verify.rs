//! A posteriori checks that a mild trajectory solves the equations in the
//! strong sense: zero divergence, the right initial value, and a momentum
//! residual that is a pure gradient (the pressure).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::hodge::HodgeDecomposition;
use crate::mild::{MildTrajectory, TimeGrid};
use crate::nonlinear::advect_raw;
use crate::stokes::StokesSpectrum;

/// Checks at one node `t_j > 0`.
#[derive(Debug, Clone)]
pub struct NodeCheck {
    pub time: f64,
    /// `‖div u(t)‖`
    pub divergence: f64,
    /// `‖div u(t)‖ / ‖u(t)‖` (0 for a zero field).
    pub relative_divergence: f64,
    /// `‖P w‖` with `w = u' - Δu + c (u·∇)u`.
    pub residual_abs: f64,
    /// `‖P w‖ / (‖u'‖ + ‖Δu‖)`.
    pub residual: f64,
    pub pressure: ScalarField,
    /// `‖∇π + w‖ / (‖u'‖ + ‖Δu‖)`.
    pub gradient_match: f64,
    /// Discrete `L^{3/2}` norm of `(u·∇)u`.
    pub convective_l32: f64,
}

#[derive(Debug, Clone)]
pub struct StrongCheckReport {
    pub nodes: Vec<NodeCheck>,
    /// `‖u(t₀) - u₀‖`
    pub initial_value_error: f64,
}

impl StrongCheckReport {
    pub fn max_residual(&self) -> f64 {
        self.nodes.iter().map(|n| n.residual).fold(0.0, f64::max)
    }

    pub fn max_relative_divergence(&self) -> f64 {
        self.nodes.iter().map(|n| n.relative_divergence).fold(0.0, f64::max)
    }

    pub fn max_gradient_match(&self) -> f64 {
        self.nodes.iter().map(|n| n.gradient_match).fold(0.0, f64::max)
    }
}

/// Output of [`recover_pressure`].
#[derive(Debug, Clone)]
pub struct PressureRecovery {
    /// Minimum-norm `π` with `∇π ≈ -w`.
    pub pressure: ScalarField,
    /// `‖(I - P)(∇π + w)‖`, the least-squares defect inside the gradients.
    pub gradient_residual: f64,
    /// `‖P w‖`, the part of `w` no pressure can absorb.
    pub solenoidal: f64,
}

pub fn recover_pressure(hodge: &HodgeDecomposition, w: &VectorField) -> Result<PressureRecovery> {
    let pressure = hodge.potential(&w.scale(-1.0))?;
    let grad = hodge.operators().gradient(&pressure)?;
    let mismatch = grad.add(w)?;
    let in_gradients = mismatch.sub(&hodge.project(&mismatch)?)?;
    let solenoidal = hodge.project(w)?.norm();
    Ok(PressureRecovery { pressure, gradient_residual: in_gradients.norm(), solenoidal })
}

/// The momentum residual `w = u' - Δu + c (u·∇)u` at one node (Δ is the
/// negative of the positive Laplacian stored in the operators).
pub fn momentum_residual(
    spec: &StokesSpectrum,
    value: &DVector<f64>,
    derivative: &DVector<f64>,
    nonlinearity: f64,
) -> Result<(VectorField, VectorField, VectorField, VectorField)> {
    let ops = spec.hodge().operators();
    let u = spec.lift(value)?;
    let du = spec.lift(derivative)?;
    let lu = ops.laplacian(&u)?;
    let adv = VectorField::new(ops.mask().clone(), advect_raw(ops, u.values(), u.values()))?;
    let w = du.add(&lu)?.add(&adv.scale(nonlinearity))?;
    Ok((w, u, du, lu))
}

pub fn strong_residual(
    spec: &StokesSpectrum,
    traj: &MildTrajectory,
    u0: &VectorField,
    nonlinearity: f64,
) -> Result<StrongCheckReport> {
    let hodge = spec.hodge();
    let ops = hodge.operators();
    let start = spec.lift(&traj.values()[0])?;
    let initial_value_error = start.sub(&hodge.project(u0)?)?.norm();

    let mut nodes = Vec::with_capacity(traj.grid().intervals());
    for (j, &time) in traj.grid().nodes().iter().enumerate().skip(1) {
        let (w, u, du, lu) = momentum_residual(spec, &traj.values()[j], &traj.derivatives()[j], nonlinearity)?;
        let divergence = ops.divergence(&u)?.norm();
        let unorm = u.norm();
        let scale = du.norm() + lu.norm();
        let rel = |x: f64| if scale > 0.0 { x / scale } else { x };
        let recovery = recover_pressure(hodge, &w)?;
        let grad = ops.gradient(&recovery.pressure)?;
        let gradient_match = rel(grad.add(&w)?.norm());
        let convective = VectorField::new(ops.mask().clone(), advect_raw(ops, u.values(), u.values()))?;
        nodes.push(NodeCheck {
            time,
            divergence,
            relative_divergence: if unorm > 0.0 { divergence / unorm } else { divergence },
            residual_abs: recovery.solenoidal,
            residual: rel(recovery.solenoidal),
            pressure: recovery.pressure,
            gradient_match,
            convective_l32: convective.lp_norm(1.5),
        });
    }
    Ok(StrongCheckReport { nodes, initial_value_error })
}

/// Cumulative `‖u(t)‖² + 2∫₀ᵗ ⟨-Δu, u⟩ ds - ‖u₀‖²` per node, trapezoidal in time.
pub fn energy_audit(spec: &StokesSpectrum, traj: &MildTrajectory) -> Result<Vec<f64>> {
    let ops = spec.hodge().operators();
    let mut energy = Vec::with_capacity(traj.values().len());
    let mut dissipation = Vec::with_capacity(traj.values().len());
    for a in traj.values() {
        let u = spec.lift(a)?;
        energy.push(u.dot(&u)?);
        dissipation.push(ops.laplacian(&u)?.dot(&u)?);
    }
    let nodes = traj.grid().nodes();
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(nodes.len());
    out.push(0.0);
    for j in 1..nodes.len() {
        integral += 0.5 * (nodes[j] - nodes[j - 1]) * (dissipation[j] + dissipation[j - 1]);
        out.push(energy[j] + 2.0 * integral - energy[0]);
    }
    Ok(out)
}

/// Growth factor beyond which the oracle reports instability.
const BLOWUP: f64 = 1e3;

/// Independent time stepper for the same system: exponential Euler in modal
/// coordinates, `a ← e^{-hΛ} a + Λ^{-1}(1 - e^{-hΛ}) c f(a)`, with the Stokes
/// part integrated exactly and the projected convection explicit. Steps are
/// at most `dt` and land exactly on every node of `grid`.
pub fn imex_oracle(
    spec: &StokesSpectrum,
    u0: &VectorField,
    grid: &TimeGrid,
    dt: f64,
    nonlinearity: f64,
) -> Result<MildTrajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Oracle(format!("time step must be positive, got {dt}")));
    }
    // Explicit convection: dt · |u|_∞ · √λ_max ≤ 1, √λ_max being the largest
    // discrete wavenumber.
    let rate = nonlinearity.abs() * spec.hodge().project(u0)?.max_abs() * spec.lambda_max().sqrt();
    if dt * rate > 1.0 {
        return Err(Error::Oracle(format!("time step {dt} violates the convective limit {}", 1.0 / rate)));
    }
    let lambda = spec.eigenvalues().clone();
    let ops = spec.hodge().operators();
    let rhs = |a: &DVector<f64>| -> DVector<f64> {
        if nonlinearity == 0.0 {
            return DVector::zeros(a.len());
        }
        let u = spec.lift_raw(a);
        spec.modal_raw(&advect_raw(ops, &u, &u)) * -nonlinearity
    };

    let mut a = spec.modal(u0)?;
    let ceiling = BLOWUP * a.norm().max(f64::MIN_POSITIVE);
    let mut values = vec![a.clone()];
    for w in grid.nodes().windows(2) {
        let span = w[1] - w[0];
        let steps = (span / dt).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let damp = lambda.map(|l| (-h * l).exp());
        let gain = lambda.map(|l| -(-h * l).exp_m1() / l);
        for _ in 0..steps {
            let f = rhs(&a);
            a = damp.component_mul(&a) + gain.component_mul(&f);
        }
        if !a.iter().all(|x| x.is_finite()) || a.norm() > ceiling {
            return Err(Error::Oracle(format!("solution grew beyond {BLOWUP}x its initial size at t = {}", w[1])));
        }
        values.push(a.clone());
    }
    let derivatives = values.iter().map(|a| -lambda.component_mul(a) + rhs(a)).collect();
    MildTrajectory::new(grid.clone(), values, derivatives)
}

/// `max_j ‖a(t_j) - b(t_j)‖ / max_j ‖a(t_j)‖`
pub fn relative_sup_deviation(a: &MildTrajectory, b: &MildTrajectory) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let size = a.values().iter().map(|x| x.norm()).fold(0.0, f64::max);
    Ok(if size > 0.0 { diff / size } else { diff })
}
