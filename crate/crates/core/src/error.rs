//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by construction, evaluation, and optimization routines.
#[derive(Debug, Error)]
pub enum PlateError {
    /// Polar decomposition of a singular or orientation-reversing matrix.
    #[error("polar decomposition requires det F > 0, got det F = {det}")]
    SingularOrReflected { det: f64 },

    /// A well matrix failed validation.
    #[error("invalid well {index}: {reason}")]
    InvalidWell { index: usize, reason: String },

    /// Model-level validation failure (disjointness, exponent ranges, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Finite-difference Hessian did not converge across refinement levels.
    #[error("finite-difference Hessian for well {well} did not converge: residual {residual:.3e}")]
    HessianNotConverged { well: usize, residual: f64 },

    /// The 3x3 optimality system of the relaxed form is singular.
    #[error("relaxed-form optimality system is singular for well {well}")]
    SingularOptimalitySystem { well: usize },

    /// Grid construction failure.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Field/grid mismatch or missing field.
    #[error("invalid field: {0}")]
    InvalidField(String),

    /// The isometric-immersion metric constraint is violated.
    #[error("metric constraint violated: worst node ({x:.6}, {y:.6}) residual {residual:.3e} exceeds {tolerance:.3e}")]
    MetricConstraint {
        x: f64,
        y: f64,
        residual: f64,
        tolerance: f64,
    },

    /// Profile slope exceeds the bound required for the isometric lift.
    #[error("profile slope bound violated: |U^-1 e3| sup|grad v A^-1| = {value:.6} must be < 1")]
    SlopeBound { value: f64 },

    /// A load that is not mean-free.
    #[error("load is not mean-free: |mean| = {mean:.3e}")]
    LoadNotMeanFree { mean: f64 },

    /// Von Karman compatibility constraint violated where required.
    #[error("compatibility constraint residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ConstraintViolated { residual: f64, tolerance: f64 },

    /// Missing ingredient for a requested recovery regime.
    #[error("recovery construction: {0}")]
    RecoveryConstruction(String),

    /// Rotation outside the locality neighborhood of a projection.
    #[error("rotation is outside the projection neighborhood: distance {distance:.4} exceeds {limit:.4}")]
    OutOfNeighborhood { distance: f64, limit: f64 },

    /// Inadmissible (R, W) pair for a limit objective.
    #[error("inadmissible rotation data: {0}")]
    Inadmissible(String),

    /// Optimizer failed to reach the first-order tolerance.
    #[error("optimizer did not converge in {iterations} iterations: gradient norm {gradient_norm:.3e}")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, PlateError>;
