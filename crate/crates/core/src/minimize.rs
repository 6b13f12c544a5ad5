//! Minimization of the limit total energies over discrete displacement
//! fields, candidate wells, and optimal-rotation grids; profile-parameter
//! search for the constrained and Kirchhoff regimes.

use nalgebra::Vector2;
use serde::Serialize;

use crate::energy::{hessian_q, MultiWellModel};
use crate::error::{PlateError, Result};
use crate::functionals::{force_work, LoadField, PlateState};
use crate::geometry::grid::{
    derivative, derivative_adjoint, Axis, Field, FieldRank,
};
use crate::geometry::nu::mat32_at;
use crate::geometry::profile::{lift_profile, profile_limit_state, PolyProfile};
use crate::linalg::{Mat3, Skew3, Vec3};
use crate::relaxed::{RelaxedForm, Sym2};
use crate::rotations::{maximize_for_load, RotationSet};

/// Minimization regime: full displacement fields for the von Karman models,
/// finite-dimensional profile families for the constrained and Kirchhoff
/// limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizeRegime {
    Vk,
    Lvk,
    CvkProfile,
    KlProfile,
}

/// Descent parameters.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// First-order tolerance: |grad| < tol (1 + |value|).
    pub gradient_tolerance: f64,
    /// Conjugate-direction acceleration (restarted Polak-Ribiere); plain
    /// steepest descent when false. Both use backtracking line search.
    pub conjugate: bool,
    /// Points per tangent dimension of the rotation-set grid.
    pub rotation_grid: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 50_000,
            gradient_tolerance: 1e-6,
            conjugate: true,
            rotation_grid: 16,
        }
    }
}

/// Profile family searched by the profile regimes: polynomial coefficients
/// on t^2 .. t^(degree+1) along a fixed direction.
#[derive(Debug, Clone)]
pub struct ProfileSearch {
    pub direction: Vector2<f64>,
    /// Number of free coefficients (at most 10).
    pub dims: usize,
}

/// A limit minimization problem over one model and load.
pub struct MinimizationProblem {
    pub regime: MinimizeRegime,
    pub model: MultiWellModel,
    pub load: LoadField,
    pub initial: PlateState,
    pub settings: OptimizerSettings,
    pub profile: Option<ProfileSearch>,
    lambda: Vec<usize>,
    sets: Vec<RotationSet>,
    forms: Vec<RelaxedForm>,
}

impl MinimizationProblem {
    pub fn new(
        regime: MinimizeRegime,
        model: MultiWellModel,
        load: LoadField,
        initial: PlateState,
        settings: OptimizerSettings,
        profile: Option<ProfileSearch>,
    ) -> Result<Self> {
        if matches!(regime, MinimizeRegime::CvkProfile | MinimizeRegime::KlProfile)
            && profile.is_none()
        {
            return Err(PlateError::Inadmissible(
                "profile regimes need a profile search space".into(),
            ));
        }
        if let Some(p) = &profile {
            if p.dims == 0 || p.dims > 10 {
                return Err(PlateError::Inadmissible(
                    "profile search uses between 1 and 10 coefficients".into(),
                ));
            }
        }
        let (lambda, sets) = maximize_for_load(&load, model.wells());
        let mut forms = Vec::new();
        for j in 0..model.wells().len() {
            forms.push(RelaxedForm::new(hessian_q(&model, j)?, *model.well(j))?);
        }
        Ok(MinimizationProblem {
            regime,
            model,
            load,
            initial,
            settings,
            profile,
            lambda,
            sets,
            forms,
        })
    }

    pub fn lambda(&self) -> &[usize] {
        &self.lambda
    }

    pub fn sets(&self) -> &[RotationSet] {
        &self.sets
    }

    pub fn form(&self, j: usize) -> &RelaxedForm {
        &self.forms[j]
    }
}

/// One step of the optimizer trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub value: f64,
    pub gradient_norm: f64,
}

/// Best tuple of a minimization run.
pub struct Minimizer {
    pub well_index: usize,
    /// Index into the rotation grid of the winning sub-problem.
    pub rotation_index: usize,
    pub rotation: Mat3,
    pub value: f64,
    pub state: PlateState,
    pub trace: Vec<TraceRow>,
}

/// Per-(well, rotation) minimized values.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub well: usize,
    pub rotation_index: usize,
    pub value: f64,
}

// ---------------------------------------------------------------------------
// Quadrature-consistent objective and its adjoint-stencil gradient.
// ---------------------------------------------------------------------------

struct DisplacementObjective<'a> {
    form: &'a RelaxedForm,
    load: &'a LoadField,
    /// f . (R U^-1 e3) sampled per node.
    force_density: Vec<f64>,
    quartic: bool,
    kappa_sq: f64,
}

impl<'a> DisplacementObjective<'a> {
    fn new(form: &'a RelaxedForm, load: &'a LoadField, r: &Mat3, quartic: bool) -> Self {
        let dir = r * form.well().inv_e3();
        let grid = load.grid();
        let force_density = (0..grid.node_count())
            .map(|n| load.value_at(n).dot(&dir))
            .collect();
        DisplacementObjective {
            form,
            load,
            force_density,
            quartic,
            kappa_sq: form.well().inv_e3().norm_squared(),
        }
    }

    /// Objective value without gradient assembly (line-search probes).
    fn value(&self, u: &Field, v: &Field) -> f64 {
        let grid = u.grid();
        let du1 = derivative(u, Axis::X1);
        let du2 = derivative(u, Axis::X2);
        let dv1 = derivative(v, Axis::X1);
        let dv2 = derivative(v, Axis::X2);
        let d11 = derivative(&dv1, Axis::X1);
        let d12 = derivative(&dv1, Axis::X2);
        let d21 = derivative(&dv2, Axis::X1);
        let d22 = derivative(&dv2, Axis::X2);
        let mut value = 0.0;
        for n in 0..grid.node_count() {
            let w = grid.weight(n);
            if w == 0.0 {
                continue;
            }
            let off = 0.5 * (d12.at(n, 0) + d21.at(n, 0));
            let hess = Sym2::new(d11.at(n, 0), off, off, d22.at(n, 0));
            value += w / 24.0 * self.form.evaluate(&hess);
            let gu = Sym2::new(
                2.0 * du1.at(n, 0),
                du2.at(n, 0) + du1.at(n, 1),
                du2.at(n, 0) + du1.at(n, 1),
                2.0 * du2.at(n, 1),
            );
            let strain = if self.quartic {
                let gv = Vector2::new(dv1.at(n, 0), dv2.at(n, 0));
                gu + self.kappa_sq
                    * Sym2::new(gv[0] * gv[0], gv[0] * gv[1], gv[1] * gv[0], gv[1] * gv[1])
            } else {
                gu
            };
            value += w / 8.0 * self.form.evaluate(&strain);
            value -= w * self.force_density[n] * v.at(n, 0);
        }
        value
    }

    /// Objective value and gradient with respect to (u, v).
    fn eval(&self, u: &Field, v: &Field) -> (f64, Field, Field) {
        let grid = u.grid().clone();
        let n_nodes = grid.node_count();

        // Forward stencil passes.
        let du1 = derivative(u, Axis::X1);
        let du2 = derivative(u, Axis::X2);
        let dv1 = derivative(v, Axis::X1);
        let dv2 = derivative(v, Axis::X2);
        let d11 = derivative(&dv1, Axis::X1);
        let d12 = derivative(&dv1, Axis::X2);
        let d21 = derivative(&dv2, Axis::X1);
        let d22 = derivative(&dv2, Axis::X2);

        let mut value = 0.0;
        // Weighted pointwise gradients, to be pulled back through the
        // stencil adjoints.
        let mut cof_h11 = Field::zeros(grid.clone(), FieldRank::Scalar);
        let mut cof_h12 = Field::zeros(grid.clone(), FieldRank::Scalar);
        let mut cof_h22 = Field::zeros(grid.clone(), FieldRank::Scalar);
        let mut cof_du1 = Field::zeros(grid.clone(), FieldRank::Vector2); // d/d (d_a u_i): comp order [u1, u2] per axis field
        let mut cof_du2 = Field::zeros(grid.clone(), FieldRank::Vector2);
        let mut cof_dv = Field::zeros(grid.clone(), FieldRank::Vector2);
        let mut grad_v_direct = Field::zeros(grid.clone(), FieldRank::Scalar);

        for n in 0..n_nodes {
            let w = grid.weight(n);
            if w == 0.0 {
                // Gauge-fixed fields may still be nonzero here but carry no
                // energy.
                continue;
            }
            // Bending.
            let off = 0.5 * (d12.at(n, 0) + d21.at(n, 0));
            let hess = Sym2::new(d11.at(n, 0), off, off, d22.at(n, 0));
            value += w / 24.0 * self.form.evaluate(&hess);
            let gb = self.form.gradient(&hess) * (w / 24.0);
            cof_h11.set(n, 0, gb[(0, 0)]);
            cof_h12.set(n, 0, gb[(0, 1)]);
            cof_h22.set(n, 0, gb[(1, 1)]);

            // Membrane.
            let gu = Sym2::new(
                2.0 * du1.at(n, 0),
                du2.at(n, 0) + du1.at(n, 1),
                du2.at(n, 0) + du1.at(n, 1),
                2.0 * du2.at(n, 1),
            );
            let gv = Vector2::new(dv1.at(n, 0), dv2.at(n, 0));
            let strain = if self.quartic {
                gu + self.kappa_sq * Sym2::new(gv[0] * gv[0], gv[0] * gv[1], gv[1] * gv[0], gv[1] * gv[1])
            } else {
                gu
            };
            value += w / 8.0 * self.form.evaluate(&strain);
            let gm = self.form.gradient(&strain) * (w / 8.0);
            // d strain / d (d_a u_i) contributes 2 * gm_(i a).
            cof_du1.set(n, 0, cof_du1.at(n, 0) + 2.0 * gm[(0, 0)]);
            cof_du1.set(n, 1, cof_du1.at(n, 1) + 2.0 * gm[(1, 0)]);
            cof_du2.set(n, 0, cof_du2.at(n, 0) + 2.0 * gm[(0, 1)]);
            cof_du2.set(n, 1, cof_du2.at(n, 1) + 2.0 * gm[(1, 1)]);
            if self.quartic {
                let p_gv = 2.0 * self.kappa_sq * (gm * gv);
                cof_dv.set(n, 0, cof_dv.at(n, 0) + p_gv[0]);
                cof_dv.set(n, 1, cof_dv.at(n, 1) + p_gv[1]);
            }

            // Force work (negative sign in the objective).
            value -= w * self.force_density[n] * v.at(n, 0);
            grad_v_direct.set(n, 0, -w * self.force_density[n]);
        }

        // Pull back through the stencil adjoints.
        // Bending: D1t D1t c11 + D1t D2t c12 + D2t D1t c12 + D2t D2t c22.
        let mut grad_v = grad_v_direct;
        {
            let a = derivative_adjoint(&cof_h11, Axis::X1);
            let a = derivative_adjoint(&a, Axis::X1);
            let b1 = derivative_adjoint(&cof_h12, Axis::X2);
            let b1 = derivative_adjoint(&b1, Axis::X1);
            let b2 = derivative_adjoint(&cof_h12, Axis::X1);
            let b2 = derivative_adjoint(&b2, Axis::X2);
            let c = derivative_adjoint(&cof_h22, Axis::X2);
            let c = derivative_adjoint(&c, Axis::X2);
            for n in 0..n_nodes {
                let acc = grad_v.at(n, 0) + a.at(n, 0) + b1.at(n, 0) + b2.at(n, 0) + c.at(n, 0);
                grad_v.set(n, 0, acc);
            }
        }
        if self.quartic {
            let a = derivative_adjoint(
                &{
                    let mut f = Field::zeros(grid.clone(), FieldRank::Scalar);
                    for n in 0..n_nodes {
                        f.set(n, 0, cof_dv.at(n, 0));
                    }
                    f
                },
                Axis::X1,
            );
            let b = derivative_adjoint(
                &{
                    let mut f = Field::zeros(grid.clone(), FieldRank::Scalar);
                    for n in 0..n_nodes {
                        f.set(n, 0, cof_dv.at(n, 1));
                    }
                    f
                },
                Axis::X2,
            );
            for n in 0..n_nodes {
                let acc = grad_v.at(n, 0) + a.at(n, 0) + b.at(n, 0);
                grad_v.set(n, 0, acc);
            }
        }
        let grad_u = {
            let a = derivative_adjoint(&cof_du1, Axis::X1);
            let b = derivative_adjoint(&cof_du2, Axis::X2);
            let mut g = Field::zeros(grid, FieldRank::Vector2);
            for n in 0..n_nodes {
                g.set(n, 0, a.at(n, 0) + b.at(n, 0));
                g.set(n, 1, a.at(n, 1) + b.at(n, 1));
            }
            g
        };
        let _ = &self.load;
        (value, grad_u, grad_v)
    }
}

fn flat_norm(fields: &[&Field]) -> f64 {
    fields
        .iter()
        .flat_map(|f| f.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

fn gauge(u: &mut Field, v: &mut Field) {
    u.remove_mean();
    v.remove_mean();
}

/// Conjugate/steepest descent with backtracking on (u, v).
fn descend_displacement(
    objective: &DisplacementObjective,
    initial_u: &Field,
    initial_v: &Field,
    settings: &OptimizerSettings,
) -> Result<(f64, Field, Field, Vec<TraceRow>)> {
    let mut u = initial_u.clone();
    let mut v = initial_v.clone();
    gauge(&mut u, &mut v);

    let (mut value, mut gu, mut gv) = objective.eval(&u, &v);
    let mut trace = vec![TraceRow {
        iteration: 0,
        value,
        gradient_norm: flat_norm(&[&gu, &gv]),
    }];
    let mut du = gu.clone();
    let mut dv = gv.clone();
    for (a, b) in du.data_mut().iter_mut().zip(gu.data().iter()) {
        *a = -b;
    }
    for (a, b) in dv.data_mut().iter_mut().zip(gv.data().iter()) {
        *a = -b;
    }
    let mut step = 1.0;
    let mut g_norm_sq: f64 = gu.data().iter().chain(gv.data().iter()).map(|x| x * x).sum();

    for it in 1..=settings.max_iterations {
        let g_norm = g_norm_sq.sqrt();
        if g_norm <= settings.gradient_tolerance * (1.0 + value.abs()) {
            return Ok((value, u, v, trace));
        }

        let slope: f64 = gu
            .data()
            .iter()
            .zip(du.data().iter())
            .chain(gv.data().iter().zip(dv.data().iter()))
            .map(|(g, d)| g * d)
            .sum();
        let probe = |t: f64| -> (f64, Field, Field) {
            let mut ut = u.clone();
            let mut vt = v.clone();
            for (a, d) in ut.data_mut().iter_mut().zip(du.data().iter()) {
                *a += t * d;
            }
            for (a, d) in vt.data_mut().iter_mut().zip(dv.data().iter()) {
                *a += t * d;
            }
            gauge(&mut ut, &mut vt);
            let val = objective.value(&ut, &vt);
            (val, ut, vt)
        };
        // Exact step for the quadratic part from one probe, then an Armijo
        // check (sufficient for the weak quartic perturbation).
        let (val_probe, _, _) = probe(step);
        let curvature = 2.0 * (val_probe - value - step * slope) / (step * step);
        let mut t = if curvature > 0.0 {
            (-slope / curvature).clamp(1e-12, 1e9)
        } else {
            step
        };
        let mut accepted = false;
        let mut new_point = None;
        for _ in 0..70 {
            let (val_t, ut, vt) = probe(t);
            if val_t <= value + 1e-4 * t * slope {
                new_point = Some((val_t, ut, vt));
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // The line search stalled at numerical precision.
            return if g_norm <= 1e3 * settings.gradient_tolerance * (1.0 + value.abs()) {
                Ok((value, u, v, trace))
            } else {
                Err(PlateError::NoConvergence {
                    iterations: it,
                    gradient_norm: g_norm,
                })
            };
        }
        let (val_t, ut, vt) = new_point.expect("accepted step");
        let (val_t, gut, gvt) = {
            let (_, gut, gvt) = objective.eval(&ut, &vt);
            (val_t, gut, gvt)
        };
        let g_new_sq: f64 = gut.data().iter().chain(gvt.data().iter()).map(|x| x * x).sum();
        // Polak-Ribiere coefficient with restart.
        let beta = if settings.conjugate && it % 200 != 0 {
            let mixed: f64 = gut
                .data()
                .iter()
                .zip(gu.data().iter())
                .chain(gvt.data().iter().zip(gv.data().iter()))
                .map(|(gn, go)| gn * (gn - go))
                .sum();
            (mixed / g_norm_sq).max(0.0)
        } else {
            0.0
        };
        for (d, g) in du.data_mut().iter_mut().zip(gut.data().iter()) {
            *d = -g + beta * *d;
        }
        for (d, g) in dv.data_mut().iter_mut().zip(gvt.data().iter()) {
            *d = -g + beta * *d;
        }
        // Keep descent directions.
        let descent: f64 = du
            .data()
            .iter()
            .zip(gut.data().iter())
            .chain(dv.data().iter().zip(gvt.data().iter()))
            .map(|(d, g)| d * g)
            .sum();
        if descent >= 0.0 {
            for (d, g) in du.data_mut().iter_mut().zip(gut.data().iter()) {
                *d = -g;
            }
            for (d, g) in dv.data_mut().iter_mut().zip(gvt.data().iter()) {
                *d = -g;
            }
        }
        u = ut;
        v = vt;
        value = val_t;
        gu = gut;
        gv = gvt;
        g_norm_sq = g_new_sq;
        step = (t * 2.5).min(1e6);
        if it < 50 || it % 50 == 0 {
            trace.push(TraceRow {
                iteration: it,
                value,
                gradient_norm: g_norm_sq.sqrt(),
            });
        }
    }
    Err(PlateError::NoConvergence {
        iterations: settings.max_iterations,
        gradient_norm: g_norm_sq.sqrt(),
    })
}

/// Rotation candidates of one well set: the representative alone for
/// zero-dimensional sets, otherwise a tensor grid over tangent coordinates.
fn rotation_candidates(set: &RotationSet, per_dim: usize, zero_load: bool) -> Vec<Mat3> {
    if zero_load || set.dimension == 0 {
        return vec![*set.representative_matrix()];
    }
    let m = set.dimension;
    let count = per_dim.pow(m as u32);
    let mut out = Vec::with_capacity(count);
    for flat in 0..count {
        let mut coords = vec![0.0; m];
        let mut rest = flat;
        for c in coords.iter_mut() {
            let k = rest % per_dim;
            rest /= per_dim;
            *c = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / per_dim as f64;
        }
        out.push(set.point(&coords));
    }
    out
}

/// Minimizes the regime objective over wells in Lambda, rotation grids, and
/// fields (or profile coefficients), returning the best tuple and the table
/// of all sub-minimizations.
pub fn minimize_regime(problem: &MinimizationProblem) -> Result<(Minimizer, Vec<ComparisonRow>)> {
    let zero_load = problem.load.is_zero();
    let mut rows = Vec::new();
    let mut best: Option<Minimizer> = None;

    for &j in &problem.lambda {
        let set = &problem.sets[j];
        let form = &problem.forms[j];
        let candidates = rotation_candidates(set, problem.settings.rotation_grid, zero_load);
        // Successive rotation candidates warm-start from the previous fields.
        let mut warm: Option<(Field, Field)> = None;
        for (r_idx, r) in candidates.iter().enumerate() {
            let (value, state, trace) = match problem.regime {
                MinimizeRegime::Vk | MinimizeRegime::Lvk => {
                    let quartic = problem.regime == MinimizeRegime::Vk;
                    let objective = DisplacementObjective::new(form, &problem.load, r, quartic);
                    let (u0, v0) = warm
                        .take()
                        .unwrap_or_else(|| (problem.initial.u.clone(), problem.initial.v.clone()));
                    let (value, u, v, trace) =
                        descend_displacement(&objective, &u0, &v0, &problem.settings)?;
                    warm = Some((u.clone(), v.clone()));
                    (value, PlateState::displacement(j, u, v)?, trace)
                }
                MinimizeRegime::CvkProfile | MinimizeRegime::KlProfile => {
                    minimize_profile(problem, j, r)?
                }
            };
            rows.push(ComparisonRow {
                well: j,
                rotation_index: r_idx,
                value,
            });
            let better = match &best {
                None => true,
                Some(b) => {
                    (value, j, r_idx) < (b.value, b.well_index, b.rotation_index)
                }
            };
            if better {
                best = Some(Minimizer {
                    well_index: j,
                    rotation_index: r_idx,
                    rotation: *r,
                    value,
                    state,
                    trace,
                });
            }
        }
    }
    let best = best.ok_or_else(|| PlateError::Inadmissible("empty candidate set".into()))?;
    Ok((best, rows))
}

/// Profile-space objective: the limit functional of the polynomial profile
/// `g(t) = sum_k theta_k t^(k+2)` minus the load work.
fn profile_objective(
    problem: &MinimizationProblem,
    j: usize,
    r: &Mat3,
    theta: &[f64],
) -> Result<f64> {
    let search = problem.profile.as_ref().expect("profile search space");
    let grid = problem.initial.grid().clone();
    let form = &problem.forms[j];
    let well = problem.model.well(j);
    let mut coeffs = vec![0.0, 0.0];
    coeffs.extend_from_slice(theta);
    let profile = PolyProfile { coeffs };
    match problem.regime {
        MinimizeRegime::CvkProfile => {
            let limit = profile_limit_state(&profile, search.direction, well, grid.clone());
            let mut energy = 0.0;
            for n in 0..grid.node_count() {
                let b = limit.hess_v.block(n);
                energy += grid.weight(n) * form.evaluate(&Sym2::new(b[0], b[1], b[2], b[3]));
            }
            let state = PlateState::displacement(j, limit.u.clone(), limit.v.clone())?;
            Ok(energy / 24.0 - force_work(&state, &problem.load, r, well))
        }
        MinimizeRegime::KlProfile => {
            let lift = match lift_profile(&profile, 1.0, search.direction, well, grid.clone()) {
                Ok(l) => l,
                // Slope-bound violations act as an infinite barrier.
                Err(PlateError::SlopeBound { .. }) => return Ok(f64::INFINITY),
                Err(e) => return Err(e),
            };
            let mut energy = 0.0;
            let mut work = 0.0;
            for n in 0..grid.node_count() {
                let w = grid.weight(n);
                if w == 0.0 {
                    continue;
                }
                let gy = mat32_at(&lift.grad_y, n);
                let gn = mat32_at(&lift.grad_nu, n);
                let ii = gy.transpose() * gn;
                let d = Sym2::new(
                    ii[(0, 0)],
                    0.5 * (ii[(0, 1)] + ii[(1, 0)]),
                    0.5 * (ii[(0, 1)] + ii[(1, 0)]),
                    ii[(1, 1)],
                );
                energy += w * form.evaluate(&d);
                let yb = lift.y.block(n);
                work += w * problem
                    .load
                    .value_at(n)
                    .dot(&Vec3::new(yb[0], yb[1], yb[2]));
            }
            Ok(energy / 24.0 - work)
        }
        _ => unreachable!(),
    }
}

/// Descent over the profile coefficients with central-difference gradients.
fn minimize_profile(
    problem: &MinimizationProblem,
    j: usize,
    r: &Mat3,
) -> Result<(f64, PlateState, Vec<TraceRow>)> {
    let search = problem.profile.as_ref().expect("profile search space");
    let dims = search.dims;
    let mut theta = vec![0.0; dims];
    let eval = |t: &[f64]| profile_objective(problem, j, r, t);
    let fd_grad = |t: &[f64]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; dims];
        let h = 1e-5;
        for d in 0..dims {
            let mut tp = t.to_vec();
            let mut tm = t.to_vec();
            tp[d] += h;
            tm[d] -= h;
            g[d] = (eval(&tp)? - eval(&tm)?) / (2.0 * h);
        }
        Ok(g)
    };

    let mut value = eval(&theta)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        value,
        gradient_norm: f64::NAN,
    }];
    let mut step = 0.5;
    for it in 1..=problem.settings.max_iterations.min(2000) {
        let g = fd_grad(&theta)?;
        let g_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        trace.push(TraceRow {
            iteration: it,
            value,
            gradient_norm: g_norm,
        });
        if g_norm <= problem.settings.gradient_tolerance * (1.0 + value.abs()) {
            break;
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(g.iter()).map(|(a, gi)| a - t * gi).collect();
            let val_t = eval(&trial)?;
            if val_t <= value - 1e-4 * t * g_norm * g_norm {
                theta = trial;
                value = val_t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (t * 2.0).min(10.0);
    }

    // Materialize the winning profile as a plate state.
    let grid = problem.initial.grid().clone();
    let well = problem.model.well(j);
    let mut coeffs = vec![0.0, 0.0];
    coeffs.extend_from_slice(&theta);
    let profile = PolyProfile { coeffs };
    let state = match problem.regime {
        MinimizeRegime::CvkProfile => {
            let limit = profile_limit_state(&profile, search.direction, well, grid);
            PlateState::displacement(j, limit.u, limit.v)?
        }
        MinimizeRegime::KlProfile => {
            let lift = lift_profile(&profile, 1.0, search.direction, well, grid)?;
            PlateState::kirchhoff(j, lift.y)?
        }
        _ => unreachable!(),
    };
    Ok((value, state, trace))
}

/// Runs [`minimize_regime`] and groups the table per well (at least two
/// wells required).
pub fn compare_wells(problem: &MinimizationProblem) -> Result<(Minimizer, Vec<ComparisonRow>)> {
    if problem.model.wells().len() < 2 {
        return Err(PlateError::Inadmissible(
            "well comparison needs at least two wells".into(),
        ));
    }
    minimize_regime(problem)
}

/// Verifies that a fluctuation `beta W` (W normal, |W| = 1) cannot improve on
/// the zero-fluctuation objective at a maximizer; the margin is
/// `-F(R (beta W)^2 U_j) >= 0`.
pub fn fluctuation_margin(set: &RotationSet, w: &Skew3, beta: f64) -> f64 {
    -set.second_variation_at(set.representative_matrix(), &Skew3::new(beta * w.w))
}
