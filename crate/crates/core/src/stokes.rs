//! The Stokes operator on the divergence-free subspace and its spectral
//! calculus.
//!
//! `A` is the congruence `QᵀLQ` of the vector Dirichlet Laplacian onto the
//! divergence-free basis. Its eigenvectors give a second orthonormal basis of
//! the same subspace, the *modal* basis `φ_k`. All of the calculus
//! (fractional powers, shifted powers, the semigroup) is diagonal there, so
//! states inside the solver are carried as modal coordinates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::hodge::HodgeDecomposition;

/// Eigenvalues below `POSITIVE_FLOOR * λ_max` abort assembly.
const POSITIVE_FLOOR: f64 = 1e-12;

/// `|s · ln λ|` above this cannot be represented in f64.
const LOG_RANGE: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct StokesSpectrum {
    hodge: Arc<HodgeDecomposition>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    modes: DMatrix<f64>,
    delta: f64,
}

/// `Qᵀ L Q` for a Euclidean-orthonormal `basis`.
pub fn reduced_operator(laplacian: &CsrMatrix<f64>, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let lq: DMatrix<f64> = laplacian * basis;
    basis.tr_mul(&lq)
}

pub fn assemble_stokes(hodge: Arc<HodgeDecomposition>, delta: f64) -> Result<StokesSpectrum> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("shift must be nonnegative, got {delta}")));
    }
    let raw = reduced_operator(hodge.operators().laplacian_matrix(), hodge.basis());
    let sym = (&raw + raw.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Consistency("symmetric eigensolver did not converge".into()))?;

    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_fn(m, |k, _| eig.eigenvalues[order[k]]);
    let mut eigenvectors = DMatrix::from_fn(m, m, |i, k| eig.eigenvectors[(i, order[k])]);
    // Fix the sign of each eigenvector so the largest entry is positive.
    for mut col in eigenvectors.column_iter_mut() {
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }

    let largest = eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    // The calculus needs λ > 0; anything at the round-off level of λ_max
    // means the divergence-free basis picked up gradient directions.
    if let Some((index, &value)) = eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= POSITIVE_FLOOR * largest)
    {
        return Err(Error::NonPositiveEigenvalue { index, value });
    }

    let modes = hodge.basis() * &eigenvectors;
    Ok(StokesSpectrum { hodge, eigenvalues, eigenvectors, modes, delta })
}

impl StokesSpectrum {
    pub fn hodge(&self) -> &Arc<HodgeDecomposition> {
        &self.hodge
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending, strictly positive.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// Eigenvectors as columns, in the coordinates of the divergence-free basis.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn scale(&self) -> f64 {
        self.hodge.operators().mask().cell_volume().sqrt()
    }

    /// Modal coordinates of `P u`.
    pub fn modal(&self, u: &VectorField) -> Result<DVector<f64>> {
        u.same_mask_as(self.hodge.operators().mask())?;
        Ok(self.modal_raw(u.values()))
    }

    pub(crate) fn modal_raw(&self, values: &DVector<f64>) -> DVector<f64> {
        self.modes.tr_mul(values) * self.scale()
    }

    /// Field with the given modal coordinates.
    pub fn lift(&self, modal: &DVector<f64>) -> Result<VectorField> {
        if modal.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} modal coordinates, got {}",
                self.dim(),
                modal.len()
            )));
        }
        VectorField::new(self.hodge.operators().mask().clone(), self.lift_raw(modal))
    }

    pub(crate) fn lift_raw(&self, modal: &DVector<f64>) -> DVector<f64> {
        &self.modes * modal / self.scale()
    }

    /// The eigenfield `φ_k` (0-based `k`).
    pub fn mode(&self, k: usize) -> VectorField {
        let mut e = DVector::zeros(self.dim());
        e[k] = 1.0;
        VectorField::new(self.hodge.operators().mask().clone(), self.lift_raw(&e)).expect("mode length")
    }

    pub fn modal_from_coordinates(&self, coords: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(coords)
    }

    pub fn coordinates_from_modal(&self, modal: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * modal
    }

    /// Spectral multiplier of `A^s`, or `(δ + A)^s` when `shifted`.
    pub fn power_multiplier(&self, s: f64, shifted: bool) -> Result<DVector<f64>> {
        let shift = if shifted { self.delta } else { 0.0 };
        for lambda in [self.lambda_min(), self.lambda_max()] {
            let log_lambda = (lambda + shift).ln();
            if (s * log_lambda).abs() > LOG_RANGE || !s.is_finite() {
                return Err(Error::Range { s, log_lambda });
            }
        }
        Ok(self.eigenvalues.map(|l| (l + shift).powf(s)))
    }

    /// `A^s a` (or `(δ + A)^s a`) on modal coordinates.
    pub fn apply_power(&self, s: f64, shifted: bool, modal: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.power_multiplier(s, shifted)?.component_mul(modal))
    }

    /// `A^s u` on a field. The field must already be divergence-free unless
    /// `project` is set, in which case `P u` is used.
    pub fn apply_power_field(&self, s: f64, shifted: bool, u: &VectorField, project: bool) -> Result<VectorField> {
        let modal = self.modal(u)?;
        if !project {
            let back = self.lift(&modal)?;
            let off = back.sub(u)?.norm();
            if off > 1e-10 * u.norm() {
                return Err(Error::InvalidArgument(format!(
                    "field is not divergence-free (distance {off:e}); project it explicitly"
                )));
            }
        }
        self.lift(&self.apply_power(s, shifted, &modal)?)
    }

    /// Multiplier of `e^{-tA}`.
    pub fn semigroup_multiplier(&self, t: f64) -> Result<DVector<f64>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.eigenvalues.map(|l| (-t * l).exp()))
    }

    pub fn apply_semigroup(&self, t: f64, modal: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.semigroup_multiplier(t)?.component_mul(modal))
    }

    /// Exact operator norms `‖(tA)^s e^{-tA}‖ = max_k (tλ_k)^s e^{-tλ_k}`.
    pub fn smoothing_bound(&self, s: f64, t_grid: &[f64]) -> Vec<f64> {
        t_grid
            .iter()
            .map(|&t| {
                self.eigenvalues
                    .iter()
                    .map(|&l| scaled_decay(s, t * l))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Largest relative eigen-residual `‖P L φ_k - λ_k φ_k‖ / (λ_k ‖φ_k‖)`.
    pub fn eigen_residual(&self) -> f64 {
        let lap = self.hodge.operators().laplacian_matrix();
        let lw: DMatrix<f64> = lap * &self.modes;
        let projected = self.hodge.basis() * self.hodge.basis().tr_mul(&lw);
        (0..self.dim())
            .map(|k| {
                let r = projected.column(k) - self.modes.column(k) * self.eigenvalues[k];
                r.norm() / self.eigenvalues[k]
            })
            .fold(0.0, f64::max)
    }
}

/// `x^s e^{-x}` with `0^0 = 1`.
pub fn scaled_decay(s: f64, x: f64) -> f64 {
    if s == 0.0 {
        (-x).exp()
    } else {
        x.powf(s) * (-x).exp()
    }
}

/// `sup_{x ≥ 0} x^s e^{-x} = (s/e)^s`.
pub fn smoothing_ceiling(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        (s / std::f64::consts::E).powf(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_operators, DomainMask};
    use crate::hodge::build_hodge;

    fn spectrum(mask: DomainMask) -> StokesSpectrum {
        let ops = Arc::new(build_operators(Arc::new(mask)));
        assemble_stokes(Arc::new(build_hodge(ops).unwrap()), 0.0).unwrap()
    }

    #[test]
    fn one_column_reduction_is_rayleigh_quotient() {
        // A divergence-free subspace is never one-dimensional (its dimension is
        // at least 2n), so exercise the 1×1 reduction on one basis column.
        let s = spectrum(DomainMask::full([3, 2, 2], 1.0).unwrap());
        let q = s.hodge().basis().columns(0, 1).into_owned();
        let lap = s.hodge().operators().laplacian_matrix();
        let a = reduced_operator(lap, &q);
        let col = q.column(0).into_owned();
        let lq: DVector<f64> = lap * &col;
        let rayleigh = lq.dot(&col) / col.dot(&col);
        assert_eq!(a.shape(), (1, 1));
        assert!((a[(0, 0)] - rayleigh).abs() < 1e-12 * rayleigh);
    }

    #[test]
    fn eigenvalues_ascend_and_are_positive() {
        let s = spectrum(DomainMask::from_fn([4, 3, 2], 1.0, |x, y, _| x < 2 || y == 0).unwrap());
        assert!(s.eigenvalues().iter().all(|&l| l > 0.0));
        assert!(s.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
        assert!(s.eigen_residual() < 1e-10);
    }

    #[test]
    fn zero_power_and_time_are_identity() {
        let s = spectrum(DomainMask::full([2, 2, 2], 1.0).unwrap());
        let a = DVector::from_fn(s.dim(), |i, _| (i as f64).sin());
        assert_eq!(s.apply_power(0.0, false, &a).unwrap(), a);
        assert_eq!(s.apply_semigroup(0.0, &a).unwrap(), a);
    }

    #[test]
    fn unit_power_on_eigenmode() {
        let s = spectrum(DomainMask::full([2, 2, 2], 0.5).unwrap());
        let k = 3;
        let phi = s.mode(k);
        let out = s.apply_power_field(1.0, false, &phi, false).unwrap();
        let want = phi.scale(s.eigenvalues()[k]);
        assert!(out.sub(&want).unwrap().norm() < 1e-12 * want.norm());
        let lap = s.hodge().operators().laplacian(&phi).unwrap();
        let plap = s.hodge().project(&lap).unwrap();
        assert!(plap.sub(&want).unwrap().norm() < 1e-10 * want.norm());
    }

    #[test]
    fn semigroup_on_eigenmode() {
        let s = spectrum(DomainMask::full([2, 2, 2], 1.0).unwrap());
        let k = 5;
        let mut e = DVector::zeros(s.dim());
        e[k] = 1.0;
        let out = s.apply_semigroup(0.37, &e).unwrap();
        assert!((out[k] - (-0.37 * s.eigenvalues()[k]).exp()).abs() < 1e-15);
    }

    #[test]
    fn negative_time_is_rejected() {
        let s = spectrum(DomainMask::full([2, 1, 1], 1.0).unwrap());
        assert!(matches!(s.semigroup_multiplier(-1e-3), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn absurd_power_is_a_range_error() {
        let s = spectrum(DomainMask::full([2, 2, 1], 0.01).unwrap());
        assert!(matches!(s.power_multiplier(500.0, false), Err(Error::Range { .. })));
        assert!(s.power_multiplier(-0.25, false).is_ok());
    }

    #[test]
    fn non_divergence_free_input_needs_explicit_projection() {
        let s = spectrum(DomainMask::full([3, 3, 1], 1.0).unwrap());
        let n = s.hodge().operators().mask().occupied_count();
        let u = VectorField::new(s.hodge().operators().mask().clone(), DVector::from_element(3 * n, 1.0)).unwrap();
        assert!(s.apply_power_field(0.5, false, &u, false).is_err());
        assert!(s.apply_power_field(0.5, false, &u, true).is_ok());
    }

    #[test]
    fn smoothing_zero_power_is_slowest_decay() {
        let s = spectrum(DomainMask::full([2, 2, 2], 1.0).unwrap());
        let ts = [0.1, 1.0, 3.0];
        let got = s.smoothing_bound(0.0, &ts);
        for (g, t) in got.iter().zip(ts) {
            assert_eq!(*g, (-t * s.lambda_min()).exp());
            assert!(*g <= 1.0);
        }
    }

    #[test]
    fn negative_shift_is_rejected() {
        let ops = Arc::new(build_operators(Arc::new(DomainMask::full([2, 1, 1], 1.0).unwrap())));
        let h = Arc::new(build_hodge(ops).unwrap());
        assert!(assemble_stokes(h, -1.0).is_err());
    }
}
