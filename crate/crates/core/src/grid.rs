//! Voxel domains and the finite-difference operators living on them.
//!
//! A [`DomainMask`] marks which cells of a uniform `nx × ny × nz` grid belong
//! to the open set. Occupied cells are enumerated in lexicographic order of
//! their linear index `x + nx * (y + ny * z)`; every field stores one value
//! (or three, for vector fields) per occupied cell in that order. Vector
//! fields are stored component-major: all `u1` values, then `u2`, then `u3`.
//!
//! Values outside the mask are zero. This zero extension is the only boundary
//! condition; no boundary geometry is ever reconstructed.

use std::io::BufRead;
use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, MaskError, Result};

const NEIGHBOURS: [[isize; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    dims: [usize; 3],
    spacing: f64,
    occupancy: Vec<bool>,
    cells: Vec<[usize; 3]>,
    lookup: Vec<Option<usize>>,
}

impl DomainMask {
    /// Builds a mask from a flat occupancy vector indexed by `x + nx * (y + ny * z)`.
    pub fn new(dims: [usize; 3], spacing: f64, occupancy: Vec<bool>) -> Result<Self, MaskError> {
        if dims.contains(&0) {
            return Err(MaskError::MalformedHeader(format!("zero dimension in {dims:?}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(MaskError::MalformedHeader(format!("spacing must be positive, got {spacing}")));
        }
        let total = dims[0] * dims[1] * dims[2];
        if occupancy.len() != total {
            return Err(MaskError::DimensionMismatch(format!(
                "expected {total} cells, got {}",
                occupancy.len()
            )));
        }
        let mut cells = Vec::new();
        let mut lookup = vec![None; total];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let linear = x + dims[0] * (y + dims[1] * z);
                    if occupancy[linear] {
                        lookup[linear] = Some(cells.len());
                        cells.push([x, y, z]);
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(MaskError::EmptyDomain);
        }
        Ok(Self { dims, spacing, occupancy, cells, lookup })
    }

    /// Fully occupied box.
    pub fn full(dims: [usize; 3], spacing: f64) -> Result<Self, MaskError> {
        let total = dims.iter().product();
        Self::new(dims, spacing, vec![true; total])
    }

    /// Builds a mask from a predicate on cell coordinates.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: f64,
        mut inside: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut occupancy = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    occupancy.push(inside(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, occupancy)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Volume of one cell, the weight of the discrete L² inner product.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn is_occupied(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.dims[0] && y < self.dims[1] && z < self.dims[2] && self.occupancy[self.linear(x, y, z)]
    }

    /// Enumeration index of the cell at `(x, y, z)`, `None` when outside the mask.
    pub fn index_of(&self, x: isize, y: isize, z: isize) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        self.lookup[self.linear(x, y, z)]
    }

    /// Enumeration index of the neighbour of `cell` displaced by `offset`.
    pub fn neighbour(&self, cell: usize, offset: [isize; 3]) -> Option<usize> {
        let [x, y, z] = self.cells[cell];
        self.index_of(x as isize + offset[0], y as isize + offset[1], z as isize + offset[2])
    }

    fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Writes the mask in the `mask v1` text format.
    pub fn to_text(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let mut out = format!("mask v1\n{nx} {ny} {nz} {}\n", self.spacing);
        for z in 0..nz {
            if z > 0 {
                out.push('\n');
            }
            for y in 0..ny {
                for x in 0..nx {
                    out.push(if self.is_occupied(x, y, z) { '1' } else { '0' });
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Parses a mask in the `mask v1` text format.
///
/// ```text
/// mask v1
/// nx ny nz h
/// <nz blocks of ny lines of nx characters from {0,1}, separated by blank lines>
/// ```
pub fn load_mask(source: impl BufRead) -> Result<DomainMask, MaskError> {
    let mut lines = Vec::new();
    for line in source.lines() {
        let line = line?;
        lines.push(line.strip_suffix('\r').map(str::to_owned).unwrap_or(line));
    }
    let mut it = lines.iter().enumerate();

    match it.next() {
        Some((_, l)) if l == "mask v1" => {}
        Some((_, l)) => return Err(MaskError::MalformedHeader(format!("expected `mask v1`, got {l:?}"))),
        None => return Err(MaskError::MalformedHeader("empty input".into())),
    }
    let header = it
        .next()
        .ok_or_else(|| MaskError::MalformedHeader("missing dimension line".into()))?
        .1;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(MaskError::MalformedHeader(format!("expected `nx ny nz h`, got {header:?}")));
    }
    let mut dims = [0usize; 3];
    for (d, f) in dims.iter_mut().zip(&fields[..3]) {
        *d = f
            .parse()
            .map_err(|_| MaskError::MalformedHeader(format!("bad dimension {f:?}")))?;
        if *d == 0 {
            return Err(MaskError::MalformedHeader("dimensions must be at least 1".into()));
        }
    }
    let spacing: f64 = fields[3]
        .parse()
        .map_err(|_| MaskError::MalformedHeader(format!("bad spacing {:?}", fields[3])))?;
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(MaskError::MalformedHeader(format!("spacing must be positive, got {spacing}")));
    }

    let [nx, ny, nz] = dims;
    let mut occupancy = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        if z > 0 {
            match it.next() {
                Some((_, l)) if l.is_empty() => {}
                Some((i, _)) => {
                    return Err(MaskError::DimensionMismatch(format!(
                        "expected blank separator before block {z} at line {}",
                        i + 1
                    )))
                }
                None => return Err(MaskError::DimensionMismatch(format!("missing block {z} of {nz}"))),
            }
        }
        for y in 0..ny {
            let (i, row) = it.next().ok_or_else(|| {
                MaskError::DimensionMismatch(format!("block {z} ends after {y} of {ny} rows"))
            })?;
            if let Some(ch) = row.chars().find(|c| *c != '0' && *c != '1') {
                return Err(MaskError::InvalidCharacter { line: i + 1, ch });
            }
            if row.len() != nx {
                return Err(MaskError::DimensionMismatch(format!(
                    "line {} has {} cells, expected {nx}",
                    i + 1,
                    row.len()
                )));
            }
            occupancy.extend(row.bytes().map(|b| b == b'1'));
        }
    }
    // Trailing blank lines are tolerated, anything else is not.
    if let Some((i, _)) = it.find(|(_, l)| !l.is_empty()) {
        return Err(MaskError::DimensionMismatch(format!("unexpected content at line {}", i + 1)));
    }
    DomainMask::new(dims, spacing, occupancy)
}

fn check_same(a: &Arc<DomainMask>, b: &Arc<DomainMask>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::MaskMismatch)
    }
}

/// One real per occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    mask: Arc<DomainMask>,
    values: DVector<f64>,
}

/// Three reals per occupied cell, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    mask: Arc<DomainMask>,
    values: DVector<f64>,
}

macro_rules! field_common {
    ($ty:ident, $width:expr) => {
        impl $ty {
            pub fn new(mask: Arc<DomainMask>, values: DVector<f64>) -> Result<Self> {
                let expected = $width * mask.occupied_count();
                if values.len() != expected {
                    return Err(Error::InvalidArgument(format!(
                        "{} needs {expected} values, got {}",
                        stringify!($ty),
                        values.len()
                    )));
                }
                Ok(Self { mask, values })
            }

            pub fn zeros(mask: Arc<DomainMask>) -> Self {
                let n = $width * mask.occupied_count();
                Self { mask, values: DVector::zeros(n) }
            }

            pub fn mask(&self) -> &Arc<DomainMask> {
                &self.mask
            }

            pub fn values(&self) -> &DVector<f64> {
                &self.values
            }

            pub fn into_values(self) -> DVector<f64> {
                self.values
            }

            /// `h³`-weighted inner product.
            pub fn dot(&self, other: &Self) -> Result<f64> {
                check_same(&self.mask, &other.mask)?;
                Ok(self.mask.cell_volume() * self.values.dot(&other.values))
            }

            pub fn norm(&self) -> f64 {
                self.mask.cell_volume().sqrt() * self.values.norm()
            }

            pub fn add(&self, other: &Self) -> Result<Self> {
                check_same(&self.mask, &other.mask)?;
                Ok(Self { mask: self.mask.clone(), values: &self.values + &other.values })
            }

            pub fn sub(&self, other: &Self) -> Result<Self> {
                check_same(&self.mask, &other.mask)?;
                Ok(Self { mask: self.mask.clone(), values: &self.values - &other.values })
            }

            pub fn scale(&self, factor: f64) -> Self {
                Self { mask: self.mask.clone(), values: &self.values * factor }
            }

            pub fn same_mask(&self, other: &Self) -> Result<()> {
                check_same(&self.mask, &other.mask)
            }
        }
    };
}

field_common!(ScalarField, 1);
field_common!(VectorField, 3);

impl VectorField {
    /// Component `axis` (0, 1 or 2) of the cell with enumeration index `cell`.
    pub fn at(&self, axis: usize, cell: usize) -> f64 {
        self.values[axis * self.mask.occupied_count() + cell]
    }

    /// Largest pointwise magnitude of any component.
    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

impl ScalarField {
    /// Discrete L^p cell-sum norm `(h³ Σ |p|^q)^{1/q}`.
    pub fn lp_norm(&self, q: f64) -> f64 {
        (self.mask.cell_volume() * self.values.iter().map(|v| v.abs().powf(q)).sum::<f64>()).powf(1.0 / q)
    }
}

impl VectorField {
    /// Discrete L^q norm of the pointwise Euclidean magnitude.
    pub fn lp_norm(&self, q: f64) -> f64 {
        let n = self.mask.occupied_count();
        let sum: f64 = (0..n)
            .map(|c| {
                let m2: f64 = (0..3).map(|a| self.values[a * n + c].powi(2)).sum();
                m2.sqrt().powf(q)
            })
            .sum();
        (self.mask.cell_volume() * sum).powf(1.0 / q)
    }
}

/// Gradient, divergence and Dirichlet Laplacian on the occupied cells.
///
/// `gradient` uses centered differences with zero extension, `divergence` is
/// exactly `-gradientᵀ`, and `laplacian` is the positive 7-point stencil
/// `(6u - Σ neighbours) / h²` applied per component.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    mask: Arc<DomainMask>,
    gradient: CsrMatrix<f64>,
    divergence: CsrMatrix<f64>,
    scalar_laplacian: CsrMatrix<f64>,
    laplacian: CsrMatrix<f64>,
}

pub fn build_operators(mask: Arc<DomainMask>) -> DiscreteOperators {
    let n = mask.occupied_count();
    let h = mask.spacing();
    let half = 0.5 / h;
    let inv_h2 = 1.0 / (h * h);

    let mut grad = CooMatrix::new(3 * n, n);
    let mut lap = CooMatrix::new(n, n);
    for cell in 0..n {
        lap.push(cell, cell, 6.0 * inv_h2);
        for (axis, e) in NEIGHBOURS.iter().enumerate() {
            let back = [-e[0], -e[1], -e[2]];
            if let Some(fwd) = mask.neighbour(cell, *e) {
                grad.push(axis * n + cell, fwd, half);
                lap.push(cell, fwd, -inv_h2);
            }
            if let Some(bwd) = mask.neighbour(cell, back) {
                grad.push(axis * n + cell, bwd, -half);
                lap.push(cell, bwd, -inv_h2);
            }
        }
    }
    let gradient = CsrMatrix::from(&grad);
    let divergence = gradient.transpose() * -1.0;
    let scalar_laplacian = CsrMatrix::from(&lap);

    let mut vlap = CooMatrix::new(3 * n, 3 * n);
    for axis in 0..3 {
        for (r, c, v) in scalar_laplacian.triplet_iter() {
            vlap.push(axis * n + r, axis * n + c, *v);
        }
    }

    DiscreteOperators {
        mask,
        gradient,
        divergence,
        scalar_laplacian,
        laplacian: CsrMatrix::from(&vlap),
    }
}

impl DiscreteOperators {
    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn gradient_matrix(&self) -> &CsrMatrix<f64> {
        &self.gradient
    }

    pub fn divergence_matrix(&self) -> &CsrMatrix<f64> {
        &self.divergence
    }

    /// Positive vector Dirichlet Laplacian, `3n × 3n` block diagonal.
    pub fn laplacian_matrix(&self) -> &CsrMatrix<f64> {
        &self.laplacian
    }

    /// Positive scalar 7-point Dirichlet Laplacian, `n × n`.
    pub fn scalar_laplacian_matrix(&self) -> &CsrMatrix<f64> {
        &self.scalar_laplacian
    }

    pub fn gradient(&self, p: &ScalarField) -> Result<VectorField> {
        check_same(&self.mask, p.mask())?;
        Ok(VectorField { mask: self.mask.clone(), values: &self.gradient * p.values() })
    }

    pub fn divergence(&self, u: &VectorField) -> Result<ScalarField> {
        check_same(&self.mask, u.mask())?;
        Ok(ScalarField { mask: self.mask.clone(), values: &self.divergence * u.values() })
    }

    pub fn laplacian(&self, u: &VectorField) -> Result<VectorField> {
        check_same(&self.mask, u.mask())?;
        Ok(VectorField { mask: self.mask.clone(), values: &self.laplacian * u.values() })
    }
}
