//! Mid-plane geometry: grids, sampled fields with finite-difference calculus,
//! the normal field of isometric immersions, and profile-based isometric
//! lifts.

pub mod grid;
pub mod nu;
pub mod profile;

pub use grid::{
    derivative, derivative_adjoint, gradient_scalar, hessian_scalar, Axis, Field, FieldRank,
    MidplaneGrid,
};
pub use nu::{frame, mat32_at, normal_vector_nu, nu_at, nu_conditions_residual, set_mat32};
pub use profile::{
    lift_profile, metric_sqrt, second_form_defect, CosArc, DefectRow, DefectTable, PolyProfile,
    Profile, ProfileIsometry, SinArc,
};
