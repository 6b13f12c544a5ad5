//! Discrete limit plate functionals: Kirchhoff bending energy, the von
//! Karman family, the matching-isometry constraint residual, and dead-load
//! work terms.

use std::sync::Arc;

use nalgebra::Matrix3x2;
use serde::Serialize;

use crate::error::{PlateError, Result};
use crate::geometry::grid::{derivative, Axis, Field, FieldRank, MidplaneGrid};
use crate::geometry::nu::{mat32_at, normal_vector_nu, set_mat32};
use crate::linalg::{Mat3, Vec3, Well};
use crate::poly::Poly2;
use crate::relaxed::{RelaxedForm, Sym2};

/// Displacement (or deformation) state of a plate around one well.
#[derive(Debug, Clone)]
pub struct PlateState {
    pub well_index: usize,
    /// In-plane displacement (Vector2 components in the dual well basis).
    pub u: Field,
    /// Out-of-plane displacement (scalar).
    pub v: Field,
    /// Full deformation for the Kirchhoff regime (Vector3).
    pub y: Option<Field>,
}

impl PlateState {
    /// Displacement state (von Karman regimes).
    pub fn displacement(well_index: usize, u: Field, v: Field) -> Result<Self> {
        if u.components() != 2 || v.components() != 1 {
            return Err(PlateError::InvalidField(
                "u must be Vector2 and v scalar".into(),
            ));
        }
        if !u.same_grid(&v) {
            return Err(PlateError::InvalidField("u and v share one grid".into()));
        }
        if !u.is_finite() || !v.is_finite() {
            return Err(PlateError::InvalidField("non-finite field entries".into()));
        }
        Ok(PlateState {
            well_index,
            u,
            v,
            y: None,
        })
    }

    /// Zero displacements on a grid.
    pub fn zero(well_index: usize, grid: Arc<MidplaneGrid>) -> Self {
        PlateState {
            well_index,
            u: Field::zeros(grid.clone(), FieldRank::Vector2),
            v: Field::zeros(grid, FieldRank::Scalar),
            y: None,
        }
    }

    /// Kirchhoff state carrying a full deformation.
    pub fn kirchhoff(well_index: usize, y: Field) -> Result<Self> {
        if y.components() != 3 {
            return Err(PlateError::InvalidField("y must be Vector3".into()));
        }
        if !y.is_finite() {
            return Err(PlateError::InvalidField("non-finite deformation".into()));
        }
        let grid = y.grid().clone();
        Ok(PlateState {
            well_index,
            u: Field::zeros(grid.clone(), FieldRank::Vector2),
            v: Field::zeros(grid, FieldRank::Scalar),
            y: Some(y),
        })
    }

    pub fn grid(&self) -> &Arc<MidplaneGrid> {
        self.u.grid()
    }
}

/// Dead load on the mid-plane: polynomial components (exact moments) or a
/// sampled vector field. Mean-free by construction.
#[derive(Debug, Clone)]
pub enum LoadData {
    Polynomial([Poly2; 3]),
    Samples(Field),
}

#[derive(Debug, Clone)]
pub struct LoadField {
    data: LoadData,
    grid: Arc<MidplaneGrid>,
}

const MEAN_FREE_TOL: f64 = 1e-10;

impl LoadField {
    /// Polynomial load; the exact integral over S must vanish componentwise.
    pub fn polynomial(components: [Poly2; 3], grid: Arc<MidplaneGrid>) -> Result<Self> {
        let bounds = (grid.x0, grid.x1, grid.y0, grid.y1);
        let mut worst: f64 = 0.0;
        for p in &components {
            worst = worst.max(p.integrate(bounds).abs());
        }
        if worst > MEAN_FREE_TOL {
            return Err(PlateError::LoadNotMeanFree { mean: worst });
        }
        Ok(LoadField {
            data: LoadData::Polynomial(components),
            grid,
        })
    }

    /// Sampled load; the discrete weighted mean must vanish componentwise.
    pub fn samples(f: Field) -> Result<Self> {
        if f.components() != 3 {
            return Err(PlateError::InvalidField("load must be Vector3".into()));
        }
        let grid = f.grid().clone();
        let area = grid.area();
        for c in 0..3 {
            let mean: f64 = (0..f.node_count())
                .map(|n| grid.weight(n) * f.at(n, c))
                .sum::<f64>()
                / area;
            if mean.abs() > MEAN_FREE_TOL {
                return Err(PlateError::LoadNotMeanFree { mean: mean.abs() });
            }
        }
        Ok(LoadField {
            data: LoadData::Samples(f),
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<MidplaneGrid> {
        &self.grid
    }

    pub fn value_at(&self, node: usize) -> Vec3 {
        match &self.data {
            LoadData::Polynomial(ps) => {
                let (x1, x2) = self.grid.coords(node);
                Vec3::new(ps[0].eval(x1, x2), ps[1].eval(x1, x2), ps[2].eval(x1, x2))
            }
            LoadData::Samples(f) => {
                let b = f.block(node);
                Vec3::new(b[0], b[1], b[2])
            }
        }
    }

    /// First moments `P_ik = int f_i x_k dx`, exact for polynomial loads and
    /// by trapezoid quadrature for sampled ones.
    pub fn first_moments(&self) -> Matrix3x2<f64> {
        let mut p = Matrix3x2::zeros();
        match &self.data {
            LoadData::Polynomial(ps) => {
                let bounds = (self.grid.x0, self.grid.x1, self.grid.y0, self.grid.y1);
                for i in 0..3 {
                    p[(i, 0)] = ps[i].integrate_times_monomial(bounds, 1, 0);
                    p[(i, 1)] = ps[i].integrate_times_monomial(bounds, 0, 1);
                }
            }
            LoadData::Samples(f) => {
                for node in 0..f.node_count() {
                    let w = self.grid.weight(node);
                    let (x1, x2) = self.grid.coords(node);
                    for i in 0..3 {
                        p[(i, 0)] += w * f.at(node, i) * x1;
                        p[(i, 1)] += w * f.at(node, i) * x2;
                    }
                }
            }
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        match &self.data {
            LoadData::Polynomial(ps) => ps.iter().all(|p| p.is_zero()),
            LoadData::Samples(f) => f.data().iter().all(|&v| v == 0.0),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.data, LoadData::Polynomial(_))
    }

    /// Off-grid evaluation; polynomial loads only (sampled loads fall back to
    /// the nearest node).
    pub fn value_at_point(&self, x1: f64, x2: f64) -> Vec3 {
        match &self.data {
            LoadData::Polynomial(ps) => Vec3::new(
                ps[0].eval(x1, x2),
                ps[1].eval(x1, x2),
                ps[2].eval(x1, x2),
            ),
            LoadData::Samples(f) => {
                let (sx, sy) = self.grid.spacing();
                let ix = (((x1 - self.grid.x0) / sx).round() as usize).min(self.grid.n1 - 1);
                let iy = (((x2 - self.grid.y0) / sy).round() as usize).min(self.grid.n2 - 1);
                let b = f.block(self.grid.index(ix, iy));
                Vec3::new(b[0], b[1], b[2])
            }
        }
    }
}

fn sym2_at(field: &Field, node: usize) -> Sym2 {
    let b = field.block(node);
    Sym2::new(b[0], b[1], b[2], b[3])
}

/// `grad u` as a 2x2 field from a Vector2 field.
fn grad_vector2(u: &Field) -> Field {
    let d1 = derivative(u, Axis::X1);
    let d2 = derivative(u, Axis::X2);
    let mut out = Field::zeros(u.grid().clone(), FieldRank::Matrix(4));
    for n in 0..u.node_count() {
        let b = out.block_mut(n);
        b[0] = d1.at(n, 0);
        b[1] = d2.at(n, 0);
        b[2] = d1.at(n, 1);
        b[3] = d2.at(n, 1);
    }
    out
}

/// Hessian of the scalar field v as a 2x2 field (repeated first differences).
pub fn hessian_v(state: &PlateState) -> Field {
    crate::geometry::grid::hessian_scalar(&state.v)
}

/// `grad y` of a Vector3 deformation as a 3x2 field.
pub fn grad_deformation(y: &Field) -> Field {
    let d1 = derivative(y, Axis::X1);
    let d2 = derivative(y, Axis::X2);
    let mut out = Field::zeros(y.grid().clone(), FieldRank::Matrix(6));
    for n in 0..y.node_count() {
        let m = Matrix3x2::new(
            d1.at(n, 0),
            d2.at(n, 0),
            d1.at(n, 1),
            d2.at(n, 1),
            d1.at(n, 2),
            d2.at(n, 2),
        );
        set_mat32(&mut out, n, &m);
    }
    out
}

/// Kirchhoff bending energy `1/24 int Qbar(grad y^T grad nu)`.
///
/// Differentiates the stored deformation, constructs the normal field (which
/// checks the metric constraint), and integrates the relaxed form of the
/// second fundamental form.
pub fn energy_kl(state: &PlateState, form: &RelaxedForm) -> Result<f64> {
    let y = state
        .y
        .as_ref()
        .ok_or_else(|| PlateError::InvalidField("Kirchhoff energy requires a deformation".into()))?;
    let grad_y = grad_deformation(y);
    let nu = normal_vector_nu(&grad_y, form.well())?;
    let grad_nu = {
        let d1 = derivative(&nu, Axis::X1);
        let d2 = derivative(&nu, Axis::X2);
        let mut out = Field::zeros(y.grid().clone(), FieldRank::Matrix(6));
        for n in 0..y.node_count() {
            let m = Matrix3x2::new(
                d1.at(n, 0),
                d2.at(n, 0),
                d1.at(n, 1),
                d2.at(n, 1),
                d1.at(n, 2),
                d2.at(n, 2),
            );
            set_mat32(&mut out, n, &m);
        }
        out
    };
    let grid = y.grid();
    let mut acc = 0.0;
    for node in 0..y.node_count() {
        let w = grid.weight(node);
        if w == 0.0 {
            continue;
        }
        let ii = mat32_at(&grad_y, node).transpose() * mat32_at(&grad_nu, node);
        let d = Sym2::new(
            ii[(0, 0)],
            0.5 * (ii[(0, 1)] + ii[(1, 0)]),
            0.5 * (ii[(0, 1)] + ii[(1, 0)]),
            ii[(1, 1)],
        );
        acc += w * form.evaluate(&d);
    }
    Ok(acc / 24.0)
}

/// Max-node Frobenius norm of
/// `grad u^T + grad u + |U^-1 e3|^2 grad v x grad v`.
pub fn constraint_residual(state: &PlateState, well: &Well) -> f64 {
    let grad_u = grad_vector2(&state.u);
    let grad_v = crate::geometry::grid::gradient_scalar(&state.v);
    let kappa_sq = well.inv_e3().norm_squared();
    let mut worst = 0.0f64;
    for node in 0..state.u.node_count() {
        let gu = sym2_at(&grad_u, node);
        let gv = grad_v.block(node);
        let g = gu.transpose()
            + gu
            + kappa_sq * nalgebra::Vector2::new(gv[0], gv[1]) * nalgebra::RowVector2::new(gv[0], gv[1]);
        worst = worst.max(g.norm());
    }
    worst
}

/// Constrained von Karman energy `1/24 int Qbar(hess v)`; requires the
/// compatibility constraint to hold within 1e-6.
pub fn energy_cvk(state: &PlateState, form: &RelaxedForm) -> Result<f64> {
    let residual = constraint_residual(state, form.well());
    if residual > 1e-6 {
        return Err(PlateError::ConstraintViolated {
            residual,
            tolerance: 1e-6,
        });
    }
    Ok(bending_term(state, form))
}

fn bending_term(state: &PlateState, form: &RelaxedForm) -> f64 {
    let hess = hessian_v(state);
    let grid = state.grid();
    let mut acc = 0.0;
    for node in 0..state.v.node_count() {
        let w = grid.weight(node);
        if w == 0.0 {
            continue;
        }
        acc += w * form.evaluate(&sym2_at(&hess, node));
    }
    acc / 24.0
}

fn membrane_term(state: &PlateState, form: &RelaxedForm, with_quartic: bool) -> f64 {
    let grad_u = grad_vector2(&state.u);
    let grad_v = crate::geometry::grid::gradient_scalar(&state.v);
    let kappa_sq = form.well().inv_e3().norm_squared();
    let grid = state.grid();
    let mut acc = 0.0;
    for node in 0..state.u.node_count() {
        let w = grid.weight(node);
        if w == 0.0 {
            continue;
        }
        let gu = sym2_at(&grad_u, node);
        let mut g = gu.transpose() + gu;
        if with_quartic {
            let gv = grad_v.block(node);
            g += kappa_sq
                * nalgebra::Vector2::new(gv[0], gv[1])
                * nalgebra::RowVector2::new(gv[0], gv[1]);
        }
        acc += w * form.evaluate(&g);
    }
    acc / 8.0
}

/// Von Karman energy: bending plus the quartic membrane term.
pub fn energy_vk(state: &PlateState, form: &RelaxedForm) -> f64 {
    bending_term(state, form) + membrane_term(state, form, true)
}

/// Linearized von Karman energy: bending plus the linear membrane term.
pub fn energy_lvk(state: &PlateState, form: &RelaxedForm) -> f64 {
    bending_term(state, form) + membrane_term(state, form, false)
}

/// Work of the limit dead load on the out-of-plane displacement,
/// `int f . (R U^-1 e3) v dx`.
pub fn force_work(state: &PlateState, load: &LoadField, r: &Mat3, well: &Well) -> f64 {
    let dir = r * well.inv_e3();
    let grid = state.grid();
    let mut acc = 0.0;
    for node in 0..state.v.node_count() {
        let w = grid.weight(node);
        if w == 0.0 {
            continue;
        }
        acc += w * load.value_at(node).dot(&dir) * state.v.at(node, 0);
    }
    acc
}

/// JSON-serializable record of a functional evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalValue {
    pub functional: String,
    pub well: usize,
    pub value: f64,
    pub grid: [usize; 2],
}

impl FunctionalValue {
    pub fn new(functional: &str, well: usize, value: f64, grid: &MidplaneGrid) -> Self {
        FunctionalValue {
            functional: functional.to_string(),
            well,
            value,
            grid: [grid.n1, grid.n2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{hessian_q, MultiWellModel};
    use crate::geometry::grid::MidplaneGrid;
    use crate::geometry::profile::{lift_profile, CosArc};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn identity_form() -> RelaxedForm {
        let model = MultiWellModel::identity_green_lagrange();
        RelaxedForm::new(hessian_q(&model, 0).unwrap(), *model.well(0)).unwrap()
    }

    fn compatible_pair(grid: Arc<MidplaneGrid>) -> PlateState {
        let u = Field::from_fn(grid.clone(), FieldRank::Vector2, |x, _, out| {
            out[0] = -2.0 / 3.0 * x * x * x;
            out[1] = 0.0;
        });
        let v = Field::scalar_from_fn(grid, |x, _| x * x);
        PlateState::displacement(0, u, v).unwrap()
    }

    #[test]
    fn zero_state_has_zero_energies() {
        let grid = MidplaneGrid::unit_square(21);
        let form = identity_form();
        let state = PlateState::zero(0, grid);
        assert_eq!(energy_vk(&state, &form), 0.0);
        assert_eq!(energy_lvk(&state, &form), 0.0);
        assert_eq!(energy_cvk(&state, &form).unwrap(), 0.0);
        assert_eq!(constraint_residual(&state, form.well()), 0.0);
    }

    /// v = x1^2 with u1 = -(2/3) x1^3: the membrane strain cancels exactly and
    /// E_VK = 1/24 * Qbar(diag(2,0)) = 1/3 on the unit square.
    #[test]
    fn compatible_pair_energies() {
        let grid = MidplaneGrid::unit_square(101);
        let form = identity_form();
        let state = compatible_pair(grid);
        let residual = constraint_residual(&state, form.well());
        assert!(residual < 1e-8, "constraint residual {residual}");
        let e_vk = energy_vk(&state, &form);
        assert_relative_eq!(e_vk, 1.0 / 3.0, epsilon = 1e-8);
        let e_cvk = energy_cvk(&state, &form).unwrap();
        assert_relative_eq!(e_cvk, 1.0 / 3.0, epsilon = 1e-10);
        assert!((e_vk - e_cvk).abs() < 1e-10);
        // Membrane term alone is below 1e-12.
        assert!((e_vk - bending_term(&state, &form)).abs() < 1e-12);
    }

    /// Same v with u = 0: E_LVK keeps the bending part only, E_VK adds the
    /// quartic membrane energy.
    #[test]
    fn zero_u_splits_the_energies() {
        let grid = MidplaneGrid::unit_square(101);
        let form = identity_form();
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x * x);
        let state =
            PlateState::displacement(0, Field::zeros(grid, FieldRank::Vector2), v).unwrap();
        let e_lvk = energy_lvk(&state, &form);
        assert_relative_eq!(e_lvk, 1.0 / 3.0, epsilon = 1e-10);
        let e_vk = energy_vk(&state, &form);
        assert!(e_vk > e_lvk);
        // Quartic membrane: 1/8 int 2 |grad v x grad v|^2 = 1/8 * 2 * 16 * 1/80.
        assert_relative_eq!(e_vk - e_lvk, 0.05, epsilon = 1e-3);
    }

    #[test]
    fn constraint_residual_of_bare_v() {
        let grid = MidplaneGrid::unit_square(101);
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x * x);
        let state =
            PlateState::displacement(0, Field::zeros(grid, FieldRank::Vector2), v).unwrap();
        // max |grad v x grad v| = 4 x1^2 at x1 = 1/2.
        assert_relative_eq!(
            constraint_residual(&state, &Well::identity()),
            1.0,
            epsilon = 1e-9
        );
        let err = energy_cvk(&state, &identity_form());
        assert!(matches!(err, Err(PlateError::ConstraintViolated { .. })));
    }

    #[test]
    fn quadratic_scaling_of_cvk() {
        let grid = MidplaneGrid::unit_square(41);
        let form = identity_form();
        for t in [0.5, 2.0, 3.0] {
            let v1 = Field::scalar_from_fn(grid.clone(), |x, y| x * x - 0.3 * x * y);
            let vt = Field::scalar_from_fn(grid.clone(), |x, y| t * (x * x - 0.3 * x * y));
            let s1 = PlateState::displacement(
                0,
                Field::zeros(grid.clone(), FieldRank::Vector2),
                v1,
            )
            .unwrap();
            let st = PlateState::displacement(
                0,
                Field::zeros(grid.clone(), FieldRank::Vector2),
                vt,
            )
            .unwrap();
            let e1 = bending_term(&s1, &form);
            let et = bending_term(&st, &form);
            assert!((et - t * t * e1).abs() < 1e-10 * (1.0 + et.abs()));
        }
    }

    /// Kirchhoff energy of the radius-2 cylinder on the unit square is
    /// |S|/48, and doubling the radius quarters it.
    #[test]
    fn kirchhoff_cylinder_energy() {
        let grid = MidplaneGrid::unit_square(201);
        let form = identity_form();
        for (r, expect) in [(2.0, 1.0 / 48.0), (4.0, 1.0 / 192.0)] {
            let lift = lift_profile(
                &CosArc { radius: r },
                1.0,
                Vector2::new(1.0, 0.0),
                &Well::identity(),
                grid.clone(),
            )
            .unwrap();
            let state = PlateState::kirchhoff(0, lift.y.clone()).unwrap();
            let e = energy_kl(&state, &form).unwrap();
            assert!(
                (e - expect).abs() < 0.02 * expect,
                "r = {r}: {e} vs {expect}"
            );
        }
    }

    #[test]
    fn kirchhoff_flat_state_is_zero() {
        let grid = MidplaneGrid::unit_square(31);
        let u = Well::new(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 2.0))).unwrap();
        let model = crate::energy::MultiWellModel::new(
            vec![u],
            crate::energy::DensityKind::GreenLagrange,
            2.0,
            4.0,
            1.0,
        )
        .unwrap();
        let form = RelaxedForm::new(hessian_q(&model, 0).unwrap(), u).unwrap();
        let y = Field::from_fn(grid, FieldRank::Vector3, |x1, x2, out| {
            let p = u.matrix() * Vec3::new(x1, x2, 0.0);
            out.copy_from_slice(p.as_slice());
        });
        let state = PlateState::kirchhoff(0, y).unwrap();
        let e = energy_kl(&state, &form).unwrap();
        assert!(e.abs() < 1e-18, "flat energy {e}");
    }

    #[test]
    fn energy_kl_requires_deformation() {
        let grid = MidplaneGrid::unit_square(9);
        let state = PlateState::zero(0, grid);
        assert!(energy_kl(&state, &identity_form()).is_err());
    }

    #[test]
    fn force_work_moment() {
        let grid = MidplaneGrid::unit_square(101);
        let load = LoadField::polynomial(
            [
                Poly2::zero(),
                Poly2::zero(),
                Poly2::new(vec![0.0, 1.0]), // f3 = x1
            ],
            grid.clone(),
        )
        .unwrap();
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x);
        let state =
            PlateState::displacement(0, Field::zeros(grid, FieldRank::Vector2), v).unwrap();
        let w = force_work(&state, &load, &Mat3::identity(), &Well::identity());
        // Trapezoid integral of x1^2 on the unit square.
        assert_relative_eq!(w, 1.0 / 12.0, epsilon = 1e-4);
        // Flipping e3 flips the sign.
        let r_flip = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        let w_flip = force_work(&state, &load, &r_flip, &Well::identity());
        assert_relative_eq!(w_flip, -w, epsilon = 1e-14);
        // v = 0 gives zero work.
        let zero = PlateState::zero(0, state.grid().clone());
        assert_eq!(
            force_work(&zero, &load, &Mat3::identity(), &Well::identity()),
            0.0
        );
    }

    #[test]
    fn loads_must_be_mean_free() {
        let grid = MidplaneGrid::unit_square(21);
        let err = LoadField::polynomial(
            [Poly2::new(vec![1.0]), Poly2::zero(), Poly2::zero()],
            grid,
        );
        assert!(matches!(err, Err(PlateError::LoadNotMeanFree { .. })));
    }

    /// Coarse-to-fine comparison: functional values converge at second order.
    #[test]
    fn refinement_convergence() {
        let form = identity_form();
        let mut vals = Vec::new();
        for n in [26, 51, 101] {
            let grid = MidplaneGrid::unit_square(n);
            let v = Field::scalar_from_fn(grid.clone(), |x, y| {
                (2.0 * x).sin() * (1.5 * y).cos() * 0.1
            });
            let state =
                PlateState::displacement(0, Field::zeros(grid, FieldRank::Vector2), v).unwrap();
            vals.push(energy_lvk(&state, &form));
        }
        let e1 = (vals[0] - vals[2]).abs();
        let e2 = (vals[1] - vals[2]).abs();
        let slope = (e1 / e2).log2();
        assert!(slope > 1.8, "refinement order {slope}");
    }
}
