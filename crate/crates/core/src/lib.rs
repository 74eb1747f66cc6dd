//! Stokes operator, fractional calculus and mild Navier–Stokes solutions on
//! voxelized domains.
//!
//! The pipeline is
//!
//! 1. [`grid`]: a [`DomainMask`] and its finite-difference operators,
//! 2. [`hodge`]: the orthogonal split into divergence-free fields and gradients,
//! 3. [`stokes`]: the Stokes operator `A = P(-Δ)` on the divergence-free
//!    subspace with its exact spectral calculus,
//! 4. [`nonlinear`]: the projected convective forcing,
//! 5. [`mild`]: the weighted space `E_T`, the bilinear map `Φ` and the Picard
//!    iteration `v_{n+1} = α + Φ(v_n, v_n)`,
//! 6. [`verify`]: strong-solution residuals, pressure recovery and an
//!    independent time-stepping oracle.

pub mod error;
pub mod grid;
pub mod hodge;
pub mod mild;
pub mod nonlinear;
pub mod quadrature;
pub mod stokes;
pub mod verify;

pub use error::{Error, MaskError, Result};
pub use grid::{build_operators, load_mask, DiscreteOperators, DomainMask, ScalarField, VectorField};
pub use hodge::{build_hodge, HodgeDecomposition, Splitting};
pub use mild::{
    alpha_from_modal, alpha_trajectory, convolve, estimate_phi_norm, et_norm, fixed_point_residual, phi,
    picard_iterate, picard_solve, shrink_horizon, smallness_gate, ETNorms, HorizonAttempt, HorizonChoice,
    IterationLog, IterationStep, MildTrajectory, PicardConfig, TimeGrid,
};
pub use nonlinear::{advect, forcing, forcing_derivative, ForcingSample};
pub use stokes::{assemble_stokes, StokesSpectrum};
pub use verify::{
    energy_audit, imex_oracle, recover_pressure, relative_sup_deviation, strong_residual, PressureRecovery,
    StrongCheckReport,
};
