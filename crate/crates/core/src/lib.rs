//! Numerical library for multi-well plate models in nonlinear elasticity.
//!
//! Implements the pieces of the thin-plate hierarchy around energy densities
//! minimized on several copies of SO(3): well linearizations and their
//! relaxed quadratic forms, limit plate functionals (Kirchhoff and the von
//! Karman family), explicit recovery sequences whose rescaled 3-D energies
//! converge to the limits, and optimal-rotation analysis for dead loads.

pub mod energy;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod linalg;
pub mod poly;
pub mod recovery;
pub mod rotations;
pub mod minimize;
pub mod relaxed;

pub use energy::{check_hypotheses, hessian_q, DensityKind, HypothesisReport, MultiWellModel, QuadraticForm3};
pub use error::{PlateError, Result};
pub use linalg::{
    dist_to_well, exp_skew, polar_rotation, procrustes_max, rank_one_connected, Mat3, Skew3, Vec3,
    Well,
};
pub use relaxed::{RelaxedForm, Sym2};
