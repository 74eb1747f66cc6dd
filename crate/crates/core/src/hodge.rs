//! Orthogonal splitting of vector fields into a divergence-free part and a
//! discrete gradient.
//!
//! Because `divergence = -gradientᵀ`, the kernel of the divergence is exactly
//! the orthogonal complement of the gradient's range. Both pieces come from a
//! thin SVD of the gradient, via the eigenproblem of `gᵀg`: the left singular vectors with non-negligible
//! singular values span the gradients, and a Householder QR of
//! `[U_r | I]` supplies an orthonormal basis of the complement.
//!
//! The divergence-free basis is stored Euclidean-orthonormal (`QᵀQ = I`);
//! coordinates are scaled by `h^{3/2}` so that they carry the `h³`-weighted
//! L² norm, i.e. the weighted basis is `Z = h^{-3/2} Q`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{DiscreteOperators, ScalarField, VectorField};

/// Relative singular value cutoff of the gradient.
pub const RANK_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct HodgeDecomposition {
    ops: Arc<DiscreteOperators>,
    basis: DMatrix<f64>,
    gradient_range: DMatrix<f64>,
    gradient_singular: DVector<f64>,
    gradient_right: DMatrix<f64>,
}

pub fn build_hodge(ops: Arc<DiscreteOperators>) -> Result<HodgeDecomposition> {
    let n = ops.mask().occupied_count();
    let g = DMatrix::from(ops.gradient_matrix());
    let Factors { u: gradient_range, singular_values: gradient_singular, v: gradient_right, sigma_max } =
        gradient_svd(&g)?;
    let rank = gradient_range.ncols();

    let mut stacked = DMatrix::zeros(3 * n, rank + 3 * n);
    stacked.columns_mut(0, rank).copy_from(&gradient_range);
    stacked.columns_mut(rank, 3 * n).fill_with_identity();
    let q = stacked.qr().q();
    let basis = q.columns(rank, 3 * n - rank).into_owned();

    let dim = basis.ncols();
    if dim + rank != 3 * n {
        return Err(Error::Consistency(format!("dim H ({dim}) + rank G ({rank}) != 3n ({})", 3 * n)));
    }
    if rank > 0 {
        let div_z = ops.divergence_matrix() * &basis;
        let leak = div_z.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        if leak > 1e-8 * sigma_max {
            return Err(Error::Consistency(format!(
                "divergence-free basis leaks divergence {leak:e} (sigma_max {sigma_max:e})"
            )));
        }
    }

    Ok(HodgeDecomposition { ops, basis, gradient_range, gradient_singular, gradient_right })
}

/// Truncated SVD `g ≈ U Σ Vᵀ` over singular values above the cutoff.
struct Factors {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
    sigma_max: f64,
}

/// Computed from the symmetric eigenproblem of `gᵀg`: the nalgebra
/// bidiagonal SVD misconverges on the clustered spectra of small masks, the
/// symmetric solver does not. `U = G V Σ⁻¹` is re-orthonormalized by QR.
fn gradient_svd(g: &DMatrix<f64>) -> Result<Factors> {
    let eig = g
        .tr_mul(g)
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Consistency("eigensolver for the gradient did not converge".into()))?;
    let sigma = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sigma_max = sigma.max();
    let mut keep: Vec<usize> =
        (0..sigma.len()).filter(|&i| sigma_max > 0.0 && sigma[i] > RANK_TOLERANCE * sigma_max).collect();
    keep.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let singular_values = DVector::from_fn(keep.len(), |j, _| sigma[keep[j]]);
    let v = DMatrix::from_fn(g.ncols(), keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    let mut u = g * &v;
    for (mut col, s) in u.column_iter_mut().zip(singular_values.iter()) {
        col /= *s;
    }
    if !keep.is_empty() {
        let qr = u.clone().qr();
        let r = qr.r();
        u = qr.q();
        for (j, mut col) in u.column_iter_mut().enumerate() {
            col *= r[(j, j)].signum();
        }
    }
    Ok(Factors { u, singular_values, v, sigma_max })
}

/// Result of [`HodgeDecomposition::decompose`].
#[derive(Debug, Clone)]
pub struct Splitting {
    pub divergence_free: VectorField,
    pub gradient_part: VectorField,
    pub potential: ScalarField,
}

impl HodgeDecomposition {
    pub fn operators(&self) -> &Arc<DiscreteOperators> {
        &self.ops
    }

    /// Dimension of the divergence-free subspace.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn gradient_rank(&self) -> usize {
        self.gradient_range.ncols()
    }

    /// Euclidean-orthonormal basis `Q` of `ker(divergence)`, `3n × dim`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    fn scale(&self) -> f64 {
        self.ops.mask().cell_volume().sqrt()
    }

    /// Coordinates of `P u` in the `h³`-orthonormal basis `Z`, i.e. `h³ Zᵀ u`.
    pub fn coordinates(&self, u: &VectorField) -> Result<DVector<f64>> {
        u.same_mask_as(self.ops.mask())?;
        Ok(self.coordinates_raw(u.values()))
    }

    pub(crate) fn coordinates_raw(&self, values: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(values) * self.scale()
    }

    /// The field `Z c`.
    pub fn lift(&self, coords: &DVector<f64>) -> Result<VectorField> {
        if coords.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                coords.len()
            )));
        }
        VectorField::new(self.ops.mask().clone(), &self.basis * coords / self.scale())
    }

    /// Orthogonal projection onto the divergence-free subspace.
    pub fn project(&self, u: &VectorField) -> Result<VectorField> {
        u.same_mask_as(self.ops.mask())?;
        VectorField::new(self.ops.mask().clone(), self.project_raw(u.values()))
    }

    pub(crate) fn project_raw(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(values)
    }

    /// Minimum-norm least-squares potential `p` with `gradient p ≈ w`.
    pub fn potential(&self, w: &VectorField) -> Result<ScalarField> {
        w.same_mask_as(self.ops.mask())?;
        let mut c = self.gradient_range.tr_mul(w.values());
        c.component_div_assign(&self.gradient_singular);
        ScalarField::new(self.ops.mask().clone(), &self.gradient_right * c)
    }

    /// `u = u_H + gradient p` with `u_H` divergence-free and `p` minimum-norm.
    pub fn decompose(&self, u: &VectorField) -> Result<Splitting> {
        let divergence_free = self.project(u)?;
        let potential = self.potential(u)?;
        let gradient_part = self.ops.gradient(&potential)?;
        Ok(Splitting { divergence_free, gradient_part, potential })
    }
}

impl VectorField {
    pub(crate) fn same_mask_as(&self, mask: &Arc<crate::grid::DomainMask>) -> Result<()> {
        if Arc::ptr_eq(self.mask(), mask) || **self.mask() == **mask {
            Ok(())
        } else {
            Err(Error::MaskMismatch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_operators, DomainMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(mask: DomainMask) -> HodgeDecomposition {
        build_hodge(Arc::new(build_operators(Arc::new(mask)))).unwrap()
    }

    fn random_field(h: &HodgeDecomposition, rng: &mut ChaCha8Rng) -> VectorField {
        let n = 3 * h.operators().mask().occupied_count();
        VectorField::new(h.operators().mask().clone(), DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    #[test]
    fn single_cell_has_no_gradients() {
        let h = setup(DomainMask::full([1, 1, 1], 1.0).unwrap());
        assert_eq!(h.gradient_rank(), 0);
        assert_eq!(h.dim(), 3);
    }

    #[test]
    fn full_box_dimension_count() {
        let h = setup(DomainMask::full([4, 4, 4], 1.0).unwrap());
        // Centered differences on an even-length line are invertible, so the
        // gradient has full column rank 64.
        assert_eq!(h.gradient_rank(), 64);
        assert_eq!(h.dim(), 3 * 64 - 64);
    }

    #[test]
    fn odd_box_has_gradient_kernel() {
        // On an odd line the centered difference has a one-dimensional kernel
        // (alternating pattern), so a 3×3×3 box loses one rank.
        let h = setup(DomainMask::full([3, 3, 3], 1.0).unwrap());
        assert_eq!(h.gradient_rank(), 26);
        assert_eq!(h.dim(), 81 - 26);
    }

    #[test]
    fn zero_field_decomposes_to_zero() {
        let h = setup(DomainMask::full([3, 2, 2], 1.0).unwrap());
        let zero = VectorField::zeros(h.operators().mask().clone());
        let s = h.decompose(&zero).unwrap();
        assert_eq!(s.divergence_free.norm(), 0.0);
        assert_eq!(s.gradient_part.norm(), 0.0);
        assert_eq!(s.potential.norm(), 0.0);
    }

    #[test]
    fn gradient_input_is_pure_gradient() {
        let h = setup(DomainMask::from_fn([4, 4, 2], 0.5, |x, y, _| x < 2 || y < 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = h.operators().mask().occupied_count();
        let p0 = ScalarField::new(h.operators().mask().clone(), DVector::from_fn(n, |_, _| rng.gen())).unwrap();
        let u = h.operators().gradient(&p0).unwrap();
        let s = h.decompose(&u).unwrap();
        assert!(s.divergence_free.norm() <= 1e-12 * u.norm());
        assert!(s.gradient_part.sub(&u).unwrap().norm() <= 1e-10 * u.norm());
    }

    #[test]
    fn coordinates_round_trip_through_lift() {
        let h = setup(DomainMask::full([2, 3, 2], 0.3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_field(&h, &mut rng);
        let c = h.coordinates(&u).unwrap();
        let back = h.lift(&c).unwrap();
        let pu = h.project(&u).unwrap();
        assert!(back.sub(&pu).unwrap().norm() <= 1e-12 * u.norm());
        // Coordinates carry the weighted norm.
        assert!((c.norm() - pu.norm()).abs() <= 1e-12 * u.norm());
    }

    #[test]
    fn lift_rejects_wrong_length() {
        let h = setup(DomainMask::full([2, 1, 1], 1.0).unwrap());
        assert!(h.lift(&DVector::zeros(h.dim() + 1)).is_err());
    }
}
