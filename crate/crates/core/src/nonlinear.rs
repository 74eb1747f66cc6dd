//! Convective term `(u·∇)v` and the projected symmetric forcing
//! `f = -½ P((u·∇)v + (v·∇)u)` together with its time derivative.

use nalgebra::DVector;

use crate::error::Result;
use crate::grid::{DiscreteOperators, VectorField};
use crate::hodge::HodgeDecomposition;

/// The convective term at one time.
#[derive(Debug, Clone)]
pub struct ForcingSample {
    pub time: f64,
    /// Unprojected `(u·∇)v + (v·∇)u` (or its product-rule derivative).
    pub raw: VectorField,
    /// `-½ h³ Zᵀ raw`, coordinates of the projected forcing.
    pub projected: DVector<f64>,
}

impl ForcingSample {
    pub fn at(mut self, time: f64) -> Self {
        self.time = time;
        self
    }
}

/// Component `i` of the result is `Σ_j u_j D_j v_i`, centered differences with zero extension.
pub fn advect(ops: &DiscreteOperators, u: &VectorField, v: &VectorField) -> Result<VectorField> {
    u.same_mask(v)?;
    u.same_mask_as(ops.mask())?;
    VectorField::new(ops.mask().clone(), advect_raw(ops, u.values(), v.values()))
}

pub(crate) fn advect_raw(ops: &DiscreteOperators, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = ops.mask().occupied_count();
    let grad = ops.gradient_matrix();
    let mut out = DVector::zeros(3 * n);
    for i in 0..3 {
        let vi = v.rows(i * n, n).into_owned();
        let dvi = grad * &vi;
        let mut oi = out.rows_mut(i * n, n);
        for j in 0..3 {
            oi += u.rows(j * n, n).component_mul(&dvi.rows(j * n, n));
        }
    }
    out
}

/// `(u·∇)v + (v·∇)u`
pub(crate) fn symmetric_advection_raw(ops: &DiscreteOperators, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    advect_raw(ops, u, v) + advect_raw(ops, v, u)
}

pub fn forcing(hodge: &HodgeDecomposition, u: &VectorField, v: &VectorField) -> Result<ForcingSample> {
    let ops = hodge.operators();
    u.same_mask(v)?;
    u.same_mask_as(ops.mask())?;
    let raw = symmetric_advection_raw(ops, u.values(), v.values());
    let projected = hodge.coordinates_raw(&raw) * -0.5;
    Ok(ForcingSample { time: 0.0, raw: VectorField::new(ops.mask().clone(), raw)?, projected })
}

/// `-½ P((u'·∇)v + (u·∇)v' + (v'·∇)u + (v·∇)u')`
pub fn forcing_derivative(
    hodge: &HodgeDecomposition,
    u: &VectorField,
    du: &VectorField,
    v: &VectorField,
    dv: &VectorField,
) -> Result<ForcingSample> {
    let ops = hodge.operators();
    for f in [du, v, dv] {
        u.same_mask(f)?;
    }
    u.same_mask_as(ops.mask())?;
    let raw = symmetric_advection_raw(ops, du.values(), v.values())
        + symmetric_advection_raw(ops, u.values(), dv.values());
    let projected = hodge.coordinates_raw(&raw) * -0.5;
    Ok(ForcingSample { time: 0.0, raw: VectorField::new(ops.mask().clone(), raw)?, projected })
}
