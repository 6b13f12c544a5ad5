//! Explicit recovery deformations per scaling regime, the rescaled 3-D
//! energy with its singular penalty, and convergence reports toward the
//! limit plate functionals.
//!
//! In every regime the rescaled gradient and Hessian are polynomials of
//! degree two in the thickness variable; the in-plane derivatives come from
//! grid stencils (or profile analytics) once, and the `(h, x3)`-dependence is
//! assembled exactly, never by differencing in `x3` or `h`.

use std::sync::Arc;

use nalgebra::Vector2;
use serde::Serialize;

use crate::energy::MultiWellModel;
use crate::error::{PlateError, Result};
use crate::functionals::PlateState;
use crate::geometry::grid::{derivative, Axis, Field, FieldRank, MidplaneGrid};
use crate::geometry::nu::mat32_at;
use crate::geometry::profile::{lift_profile, profile_limit_state, Profile, ProfileIsometry};
use crate::linalg::{Mat3, Vec3, Well};
use crate::relaxed::{RelaxedForm, Sym2};

/// Scaling regime of the recovery construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Kirchhoff,
    Cvk,
    Vk,
    Lvk,
}

impl RegimeTag {
    /// The regime owning a scaling exponent.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha < 2.0 {
            return Err(PlateError::RecoveryConstruction(format!(
                "alpha = {alpha} must be >= 2"
            )));
        }
        Ok(if alpha == 2.0 {
            RegimeTag::Kirchhoff
        } else if alpha < 4.0 {
            RegimeTag::Cvk
        } else if alpha == 4.0 {
            RegimeTag::Vk
        } else {
            RegimeTag::Lvk
        })
    }
}

/// Penalty schedule `eta(h) = h^s` with `s` inside the window compatible with
/// the scaling hypotheses: strong enough for compactness, negligible in the
/// limit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PenaltySchedule {
    pub alpha: f64,
    pub gamma: f64,
    pub p: f64,
    pub s: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Set when the requested p left an empty window and was raised.
    pub auto_raised_p: bool,
}

impl PenaltySchedule {
    pub fn eta(&self, h: f64) -> f64 {
        h.powf(self.s)
    }
}

/// Builds the schedule: `s_max = alpha/3`, `s_min = max(0, 1 - gamma(1-2/p))`,
/// `s` the midpoint. An empty window raises `p` in steps of 0.5 until it
/// opens (flagged in the result).
pub fn make_schedule(alpha: f64, p: f64, q: f64) -> Result<PenaltySchedule> {
    if alpha < 2.0 {
        return Err(PlateError::RecoveryConstruction(format!(
            "alpha = {alpha} must be >= 2"
        )));
    }
    if p <= 1.0 {
        return Err(PlateError::RecoveryConstruction(format!("p = {p} must exceed 1")));
    }
    let gamma = alpha / 2.0;
    let s_max = alpha / 3.0;
    let window_min = |p: f64| (1.0 - gamma * (1.0 - 2.0 / p)).max(0.0);
    let mut p_eff = p;
    if q < 2.0 {
        p_eff = p_eff.max(6.0 / 5.0 + 0.05);
    }
    let mut auto_raised = p_eff > p;
    while window_min(p_eff) >= s_max {
        p_eff += 0.5;
        auto_raised = true;
        if p_eff > 1e3 {
            return Err(PlateError::RecoveryConstruction(
                "no penalty exponent opens the schedule window".into(),
            ));
        }
    }
    let s_min = window_min(p_eff);
    Ok(PenaltySchedule {
        alpha,
        gamma,
        p: p_eff,
        s: 0.5 * (s_min + s_max),
        s_min,
        s_max,
        auto_raised_p: auto_raised,
    })
}

/// Second derivatives of a multi-component field: `[c][a][b]` blocks with the
/// mixed part symmetrized.
fn second_derivatives(f: &Field) -> Field {
    let comps = f.components();
    let d1 = derivative(f, Axis::X1);
    let d2 = derivative(f, Axis::X2);
    let d11 = derivative(&d1, Axis::X1);
    let d12 = derivative(&d1, Axis::X2);
    let d21 = derivative(&d2, Axis::X1);
    let d22 = derivative(&d2, Axis::X2);
    let mut out = Field::zeros(f.grid().clone(), FieldRank::Matrix(comps * 4));
    for n in 0..f.node_count() {
        for c in 0..comps {
            let off = 0.5 * (d12.at(n, c) + d21.at(n, c));
            let b = out.block_mut(n);
            b[c * 4] = d11.at(n, c);
            b[c * 4 + 1] = off;
            b[c * 4 + 2] = off;
            b[c * 4 + 3] = d22.at(n, c);
        }
    }
    out
}

/// First derivatives of a multi-component field: `[c][a]` blocks.
fn first_derivatives(f: &Field) -> Field {
    let comps = f.components();
    let d1 = derivative(f, Axis::X1);
    let d2 = derivative(f, Axis::X2);
    let mut out = Field::zeros(f.grid().clone(), FieldRank::Matrix(comps * 2));
    for n in 0..f.node_count() {
        let b = out.block_mut(n);
        for c in 0..comps {
            b[c * 2] = d1.at(n, c);
            b[c * 2 + 1] = d2.at(n, c);
        }
    }
    out
}

/// Symmetric 3x3x3 tensor block: `t[i]` is the (j,k) matrix of component i.
#[derive(Debug, Clone, Copy)]
pub struct Tens3(pub [Mat3; 3]);

impl Tens3 {
    fn zeros() -> Self {
        Tens3([Mat3::zeros(); 3])
    }

    fn norm_squared(&self) -> f64 {
        self.0.iter().map(|m| m.norm_squared()).sum()
    }

    fn scaled(&self, s: f64) -> Self {
        Tens3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    fn add(&self, other: &Tens3) -> Self {
        Tens3([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }

    /// Left-rotates the component index: `t'[i] = sum_l R[i,l] t[l]`.
    fn rotate_components(&self, r: &Mat3) -> Self {
        let mut out = [Mat3::zeros(); 3];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = Mat3::zeros();
            for l in 0..3 {
                acc += r[(i, l)] * self.0[l];
            }
            *o = acc;
        }
        Tens3(out)
    }
}

/// Base fields of a displacement-regime family (all derivatives grid-based).
#[derive(Debug, Clone)]
struct DisplacementData {
    grad_u: Field,   // [i][a], 4
    hess_u: Field,   // [i][a][b], 8
    grad_v: Field,   // 2
    hess_v: Field,   // [a][b], 4
    third_v: Field,  // [a][b][c] = d_c hess_ab, 8
    xi: Field,       // 3
    grad_xi: Field,  // [i][a], 6
    hess_xi: Field,  // [i][a][b], 12
    zeta: Field,     // 3
    grad_zeta: Field, // 6
    hess_zeta: Field, // 12
}

/// Base fields of a profile-regime family.
struct ProfileData {
    profile: Box<dyn Profile + Send + Sync>,
    direction: Vector2<f64>,
    /// Correction field and derivatives; for the Kirchhoff regime this is
    /// `xi = R U^-1 L(grad y^T grad nu)`, for the constrained regime
    /// `U^-1 xi` with `xi = -2 L(hess v)` of the limit profile.
    corr: Field,      // 3
    grad_corr: Field, // 6
    hess_corr: Field, // 12
    /// Kirchhoff only: the fixed scale-1 lift.
    lift: Option<LiftBundle>,
}

struct LiftBundle {
    lift: ProfileIsometry,
    hess_nu: Field, // [i][a][b], 12, FD of the analytic grad_nu
}

impl std::fmt::Debug for ProfileData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProfileData").finish_non_exhaustive()
    }
}

#[derive(Debug)]
enum Ingredients {
    Displacement(DisplacementData),
    Profile(ProfileData),
}

/// A recovery family: per `h` it produces the deformation's rescaled gradient
/// and Hessian as exact degree-two polynomials in the thickness variable.
#[derive(Debug)]
pub struct RecoveryFamily {
    pub regime: RegimeTag,
    pub schedule: PenaltySchedule,
    well: Well,
    well_index: usize,
    grid: Arc<MidplaneGrid>,
    frame: Mat3,
    ingredients: Ingredients,
}

/// Input of [`build_recovery`]: displacement fields for the von Karman
/// regimes, a profile for the Kirchhoff and constrained regimes.
pub enum RecoveryInput<'a> {
    Displacement(&'a PlateState),
    Profile {
        profile: Box<dyn Profile + Send + Sync>,
        direction: Vector2<f64>,
    },
}

/// Builds the regime's explicit recovery family.
pub fn build_recovery(
    model: &MultiWellModel,
    form: &RelaxedForm,
    regime: RegimeTag,
    schedule: PenaltySchedule,
    input: RecoveryInput,
    grid: Arc<MidplaneGrid>,
) -> Result<RecoveryFamily> {
    let expected = RegimeTag::from_alpha(schedule.alpha)?;
    if expected != regime {
        return Err(PlateError::RecoveryConstruction(format!(
            "alpha = {} belongs to the {:?} regime, not {:?}",
            schedule.alpha, expected, regime
        )));
    }
    let well_index = form.well_index();
    let well = *form.well();
    if (model.well(well_index).matrix() - well.matrix()).norm() > 1e-12 {
        return Err(PlateError::RecoveryConstruction(
            "relaxed form and model disagree on the well".into(),
        ));
    }

    let ingredients = match (regime, input) {
        (RegimeTag::Vk | RegimeTag::Lvk, RecoveryInput::Displacement(state)) => {
            let grad_u = first_derivatives(&state.u);
            let hess_u = second_derivatives(&state.u);
            let grad_v = first_derivatives(&state.v);
            let hess_v = second_derivatives(&state.v);
            let third_v = first_derivatives(&hess_v); // [ab][c] -> 8 comps
            let kappa_sq = well.inv_e3().norm_squared();
            let u_inv = *well.inverse();

            let mut xi = Field::zeros(grid.clone(), FieldRank::Vector3);
            let mut zeta = Field::zeros(grid.clone(), FieldRank::Vector3);
            for n in 0..grid.node_count() {
                let hv = hess_v.block(n);
                let d = Sym2::new(hv[0], hv[1], hv[2], hv[3]);
                let a = -2.0 * form.l_operator(&d);
                xi.block_mut(n).copy_from_slice(a.as_slice());

                let gu = grad_u.block(n);
                let sym_gu = Sym2::new(
                    gu[0],
                    0.5 * (gu[1] + gu[2]),
                    0.5 * (gu[1] + gu[2]),
                    gu[3],
                );
                let z = match regime {
                    RegimeTag::Lvk => 2.0 * form.l_operator(&sym_gu),
                    RegimeTag::Vk => {
                        let gv = grad_v.block(n);
                        let gv3 = Vec3::new(gv[0], gv[1], 0.0);
                        let uigv = u_inv * gv3;
                        let strain = sym_gu
                            + 0.5
                                * kappa_sq
                                * Sym2::new(
                                    gv[0] * gv[0],
                                    gv[0] * gv[1],
                                    gv[1] * gv[0],
                                    gv[1] * gv[1],
                                );
                        let mut z = 2.0 * form.l_operator(&strain);
                        z += -0.5 * uigv.norm_squared() * Vec3::new(0.0, 0.0, 1.0);
                        z += well.inv_e3().dot(&uigv) * gv3;
                        z
                    }
                    _ => unreachable!(),
                };
                zeta.block_mut(n).copy_from_slice(z.as_slice());
            }
            let grad_xi = first_derivatives(&xi);
            let hess_xi = second_derivatives(&xi);
            let grad_zeta = first_derivatives(&zeta);
            let hess_zeta = second_derivatives(&zeta);
            Ingredients::Displacement(DisplacementData {
                grad_u,
                hess_u,
                grad_v,
                hess_v,
                third_v,
                xi,
                grad_xi,
                hess_xi,
                zeta,
                grad_zeta,
                hess_zeta,
            })
        }
        (RegimeTag::Kirchhoff, RecoveryInput::Profile { profile, direction }) => {
            let lift = lift_profile(profile.as_ref(), 1.0, direction, &well, grid.clone())?;
            let hess_nu = second_derivatives(&lift.nu);
            let u_inv = *well.inverse();
            let mut corr = Field::zeros(grid.clone(), FieldRank::Vector3);
            for n in 0..grid.node_count() {
                let gy = mat32_at(&lift.grad_y, n);
                let gn = mat32_at(&lift.grad_nu, n);
                let ii_m = gy.transpose() * gn;
                let ii = Sym2::new(
                    ii_m[(0, 0)],
                    0.5 * (ii_m[(0, 1)] + ii_m[(1, 0)]),
                    0.5 * (ii_m[(0, 1)] + ii_m[(1, 0)]),
                    ii_m[(1, 1)],
                );
                let nu_b = lift.nu.block(n);
                let r = crate::geometry::nu::frame(&gy, &Vec3::new(nu_b[0], nu_b[1], nu_b[2]))
                    * u_inv;
                let x = r * (u_inv * form.l_operator(&ii));
                corr.block_mut(n).copy_from_slice(x.as_slice());
            }
            let grad_corr = first_derivatives(&corr);
            let hess_corr = second_derivatives(&corr);
            Ingredients::Profile(ProfileData {
                profile,
                direction,
                corr,
                grad_corr,
                hess_corr,
                lift: Some(LiftBundle { lift, hess_nu }),
            })
        }
        (RegimeTag::Cvk, RecoveryInput::Profile { profile, direction }) => {
            let limit = profile_limit_state(profile.as_ref(), direction, &well, grid.clone());
            let u_inv = *well.inverse();
            let mut corr = Field::zeros(grid.clone(), FieldRank::Vector3);
            for n in 0..grid.node_count() {
                let hv = limit.hess_v.block(n);
                let d = Sym2::new(hv[0], hv[1], hv[2], hv[3]);
                let x = u_inv * (-2.0 * form.l_operator(&d));
                corr.block_mut(n).copy_from_slice(x.as_slice());
            }
            let grad_corr = first_derivatives(&corr);
            let hess_corr = second_derivatives(&corr);
            Ingredients::Profile(ProfileData {
                profile,
                direction,
                corr,
                grad_corr,
                hess_corr,
                lift: None,
            })
        }
        (RegimeTag::Kirchhoff | RegimeTag::Cvk, RecoveryInput::Displacement(_)) => {
            return Err(PlateError::RecoveryConstruction(
                "profile input required for the Kirchhoff and constrained regimes".into(),
            ));
        }
        (RegimeTag::Vk | RegimeTag::Lvk, RecoveryInput::Profile { .. }) => {
            return Err(PlateError::RecoveryConstruction(
                "displacement fields required for the von Karman regimes".into(),
            ));
        }
    };

    Ok(RecoveryFamily {
        regime,
        schedule,
        well,
        well_index,
        grid,
        frame: Mat3::identity(),
        ingredients,
    })
}

impl RecoveryFamily {
    pub fn grid(&self) -> &Arc<MidplaneGrid> {
        &self.grid
    }

    pub fn well_index(&self) -> usize {
        self.well_index
    }

    /// Applies a fixed rotation to the whole family (frame indifference).
    pub fn set_frame(&mut self, r: Mat3) {
        self.frame = r;
    }

    /// Assembles the per-node polynomial coefficients of the rescaled
    /// gradient and Hessian at thickness `h`.
    pub fn prepare(&self, h: f64) -> Result<PreparedFamily> {
        let n = self.grid.node_count();
        let mut grads = vec![[Mat3::zeros(); 3]; n];
        let mut hesses = vec![[Tens3::zeros(); 3]; n];
        let gamma = self.schedule.gamma;
        let u = self.well.matrix();
        let u_inv = self.well.inverse();
        let mut metric_residual = None;

        match &self.ingredients {
            Ingredients::Displacement(d) => {
                let hg = h.powf(gamma);
                for node in 0..n {
                    let gu = d.grad_u.block(node);
                    let hu = d.hess_u.block(node);
                    let gv = d.grad_v.block(node);
                    let hv = d.hess_v.block(node);
                    let tv = d.third_v.block(node);
                    let xi = d.xi.block(node);
                    let gxi = d.grad_xi.block(node);
                    let hxi = d.hess_xi.block(node);
                    let ze = d.zeta.block(node);
                    let gze = d.grad_zeta.block(node);
                    let hze = d.hess_zeta.block(node);

                    // b-coefficients of B_h = b0 + x3 b1 + x3^2 b2.
                    let b1 = Vec3::new(
                        -hg * gv[0] + hg * h * ze[0],
                        -hg * gv[1] + hg * h * ze[1],
                        hg * h * ze[2],
                    );
                    let b2 = 0.5 * hg * h * Vec3::new(xi[0], xi[1], xi[2]);

                    // In-plane derivative columns of b0, b1, b2.
                    let db0 = |a: usize| {
                        Vec3::new(hg * gu[a], hg * gu[2 + a], hg / h * gv[a])
                    };
                    // hess_v block is [a][b]; third_v is [ab][c].
                    let db1 = |a: usize| {
                        Vec3::new(
                            -hg * hv[a] + hg * h * gze[a],
                            -hg * hv[2 + a] + hg * h * gze[2 + a],
                            hg * h * gze[4 + a],
                        )
                    };
                    let db2 = |a: usize| {
                        0.5 * hg * h * Vec3::new(gxi[a], gxi[2 + a], gxi[4 + a])
                    };
                    // Second in-plane derivatives [j][k].
                    let ddb0 = |j: usize, k: usize| {
                        Vec3::new(
                            hg * hu[j * 2 + k],
                            hg * hu[4 + j * 2 + k],
                            hg / h * hv[j * 2 + k],
                        )
                    };
                    // d_jk b1, component a = -h^g d_jka v + h^{g+1} d_jk zeta_a;
                    // third_v stores d_c (hess v)_ab at [(a*2+b)*2 + c].
                    let ddb1 = |j: usize, k: usize| {
                        let t_jk = |a: usize| tv[(a * 2 + j) * 2 + k];
                        Vec3::new(
                            -hg * t_jk(0) + hg * h * hze[j * 2 + k],
                            -hg * t_jk(1) + hg * h * hze[4 + j * 2 + k],
                            hg * h * hze[8 + j * 2 + k],
                        )
                    };
                    let ddb2 = |j: usize, k: usize| {
                        0.5 * hg
                            * h
                            * Vec3::new(
                                hxi[j * 2 + k],
                                hxi[4 + j * 2 + k],
                                hxi[8 + j * 2 + k],
                            )
                    };

                    let mut g0 = *u;
                    let mut g1 = Mat3::zeros();
                    let mut g2 = Mat3::zeros();
                    for a in 0..2 {
                        let c0 = u_inv * db0(a);
                        let c1 = u_inv * db1(a);
                        let c2 = u_inv * db2(a);
                        for i in 0..3 {
                            g0[(i, a)] += c0[i];
                            g1[(i, a)] = c1[i];
                            g2[(i, a)] = c2[i];
                        }
                    }
                    {
                        let c0 = u_inv * (b1 / h);
                        let c1 = u_inv * (b2 * 2.0 / h);
                        for i in 0..3 {
                            g0[(i, 2)] += c0[i];
                            g1[(i, 2)] = c1[i];
                        }
                    }

                    let mut t0 = Tens3::zeros();
                    let mut t1 = Tens3::zeros();
                    let mut t2 = Tens3::zeros();
                    for j in 0..2 {
                        for k in 0..2 {
                            let c0 = u_inv * ddb0(j, k);
                            let c1 = u_inv * ddb1(j, k);
                            let c2 = u_inv * ddb2(j, k);
                            for i in 0..3 {
                                t0.0[i][(j, k)] = c0[i];
                                t1.0[i][(j, k)] = c1[i];
                                t2.0[i][(j, k)] = c2[i];
                            }
                        }
                        // Mixed (j,3) and (3,j): (1/h) d_j b1 + (2 x3 / h) d_j b2.
                        let m0 = u_inv * (db1(j) / h);
                        let m1 = u_inv * (db2(j) * 2.0 / h);
                        for i in 0..3 {
                            t0.0[i][(j, 2)] = m0[i];
                            t0.0[i][(2, j)] = m0[i];
                            t1.0[i][(j, 2)] = m1[i];
                            t1.0[i][(2, j)] = m1[i];
                        }
                    }
                    // (3,3): 2 b2 / h^2.
                    let c33 = u_inv * (b2 * 2.0 / (h * h));
                    for i in 0..3 {
                        t0.0[i][(2, 2)] = c33[i];
                    }

                    grads[node] = [g0, g1, g2];
                    hesses[node] = [t0, t1, t2];
                }
            }
            Ingredients::Profile(pd) => {
                // The (scaled) mid-surface and normal.
                let (lift_owned, bundle_ref);
                let bundle: &LiftBundle = match (self.regime, &pd.lift) {
                    (RegimeTag::Kirchhoff, Some(b)) => b,
                    (RegimeTag::Cvk, _) => {
                        let eps = h.powf(gamma - 1.0);
                        let lift = lift_profile(
                            pd.profile.as_ref(),
                            eps,
                            pd.direction,
                            &self.well,
                            self.grid.clone(),
                        )?;
                        let hess_nu = second_derivatives(&lift.nu);
                        lift_owned = LiftBundle { lift, hess_nu };
                        bundle_ref = &lift_owned;
                        bundle_ref
                    }
                    _ => {
                        return Err(PlateError::RecoveryConstruction(
                            "profile family missing its lift".into(),
                        ))
                    }
                };
                metric_residual = Some(bundle.lift.metric_residual);

                // x3-scaling of the correction term differs per regime:
                // Kirchhoff: y + h x3 nu + (h^2/2) x3^2 corr,
                // Cvk:       y + h x3 nu + (h^{gamma+1}/2) x3^2 corr.
                let corr_pow = match self.regime {
                    RegimeTag::Kirchhoff => h * h,
                    _ => h.powf(gamma + 1.0),
                };
                for node in 0..n {
                    let gy = mat32_at(&bundle.lift.grad_y, node);
                    let hy = bundle.lift.hess_y.block(node);
                    let nu_b = bundle.lift.nu.block(node);
                    let gnu = mat32_at(&bundle.lift.grad_nu, node);
                    let hnu = bundle.hess_nu.block(node);
                    let co = pd.corr.block(node);
                    let gco = pd.grad_corr.block(node);
                    let hco = pd.hess_corr.block(node);

                    let mut g0 = Mat3::zeros();
                    let mut g1 = Mat3::zeros();
                    let mut g2 = Mat3::zeros();
                    for i in 0..3 {
                        for a in 0..2 {
                            g0[(i, a)] = gy[(i, a)];
                            g1[(i, a)] = h * gnu[(i, a)];
                            g2[(i, a)] = 0.5 * corr_pow * gco[i * 2 + a];
                        }
                        g0[(i, 2)] = nu_b[i];
                        g1[(i, 2)] = corr_pow / h * co[i];
                    }

                    let mut t0 = Tens3::zeros();
                    let mut t1 = Tens3::zeros();
                    let mut t2 = Tens3::zeros();
                    for i in 0..3 {
                        for j in 0..2 {
                            for k in 0..2 {
                                t0.0[i][(j, k)] = hy[i * 4 + j * 2 + k];
                                t1.0[i][(j, k)] = h * hnu[i * 4 + j * 2 + k];
                                t2.0[i][(j, k)] = 0.5 * corr_pow * hco[i * 4 + j * 2 + k];
                            }
                            t0.0[i][(j, 2)] = gnu[(i, j)];
                            t0.0[i][(2, j)] = gnu[(i, j)];
                            t1.0[i][(j, 2)] = corr_pow / h * gco[i * 2 + j];
                            t1.0[i][(2, j)] = corr_pow / h * gco[i * 2 + j];
                        }
                        t0.0[i][(2, 2)] = corr_pow / (h * h) * co[i];
                    }

                    grads[node] = [g0, g1, g2];
                    hesses[node] = [t0, t1, t2];
                }
            }
        }

        // Fixed frame rotation.
        if (self.frame - Mat3::identity()).norm() > 0.0 {
            let r = self.frame;
            for node in 0..n {
                for k in 0..3 {
                    grads[node][k] = r * grads[node][k];
                    hesses[node][k] = hesses[node][k].rotate_components(&r);
                }
            }
        }

        Ok(PreparedFamily {
            grads,
            hesses,
            metric_residual,
        })
    }
}

/// Per-node polynomial coefficients of one thickness value.
pub struct PreparedFamily {
    grads: Vec<[Mat3; 3]>,
    hesses: Vec<[Tens3; 3]>,
    /// Mid-surface metric residual when the family is profile-based.
    pub metric_residual: Option<f64>,
}

impl PreparedFamily {
    /// Rescaled gradient at `(node, x3)`.
    pub fn gradient(&self, node: usize, x3: f64) -> Mat3 {
        let g = &self.grads[node];
        g[0] + x3 * g[1] + x3 * x3 * g[2]
    }

    /// Rescaled Hessian at `(node, x3)`.
    pub fn hessian(&self, node: usize, x3: f64) -> Tens3 {
        let t = &self.hesses[node];
        t[0].add(&t[1].scaled(x3)).add(&t[2].scaled(x3 * x3))
    }

    /// Mid-surface (x3-independent) part of the rescaled gradient.
    pub fn midsurface_gradient(&self, node: usize) -> &Mat3 {
        &self.grads[node][0]
    }
}

/// Gauss-Legendre nodes and weights on (-1/2, 1/2).
pub fn gauss_legendre_half(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    // Newton iteration on P_n over [-1, 1].
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            if n == 1 {
                p1 = x;
            }
            for m in 2..=n {
                let pm = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = pm;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for m in 2..=n {
            let pm = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
            p0 = p1;
            p1 = pm;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * x, 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Elastic and penalty parts of the rescaled 3-D energy at thickness `h`,
/// integrated with trapezoid weights in-plane and `n3`-point Gauss-Legendre
/// through the thickness.
pub fn rescaled_energy_3d(
    model: &MultiWellModel,
    family: &RecoveryFamily,
    h: f64,
    n3: usize,
) -> Result<(f64, f64)> {
    assert!(n3 >= 5, "at least 5 thickness quadrature nodes");
    assert!(h > 0.0);
    let prepared = family.prepare(h)?;
    let rule = gauss_legendre_half(n3);
    let grid = family.grid();
    let alpha = family.schedule.alpha;
    let p = family.schedule.p;
    let eta_p = family.schedule.eta(h).powf(p);
    let mut elastic = 0.0;
    let mut penalty = 0.0;
    for node in 0..grid.node_count() {
        let w_xy = grid.weight(node);
        if w_xy == 0.0 {
            continue;
        }
        for &(x3, w3) in &rule {
            let g = prepared.gradient(node, x3);
            elastic += w_xy * w3 * model.evaluate(&g);
            let t = prepared.hessian(node, x3);
            penalty += w_xy * w3 * t.norm_squared().powf(0.5 * p);
        }
    }
    let scale = h.powf(-alpha);
    Ok((elastic * scale, penalty * scale * eta_p))
}

/// One row of a convergence report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub elastic: f64,
    pub penalty: f64,
    pub gap: f64,
    /// Penalty share of the total energy.
    pub share: f64,
    /// Observed order against the previous row (NaN on the first row).
    pub order: f64,
}

/// Convergence report of a recovery family against its limit value.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub limit: f64,
    pub fitted_order: Option<f64>,
    pub pass: bool,
    pub gap_fraction: f64,
    pub share_limit: f64,
}

/// Tolerances of the pass flag.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceCriteria {
    /// Final gap must be below this fraction of |limit| (or below
    /// `zero_floor` when the limit vanishes).
    pub gap_fraction: f64,
    /// Final penalty share must be below this value, and shares must
    /// decrease.
    pub share_limit: f64,
    pub zero_floor: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        ConvergenceCriteria {
            gap_fraction: 0.05,
            share_limit: 0.05,
            zero_floor: 1e-10,
        }
    }
}

/// Evaluates the family along `h_list` and grades the gaps against
/// `limit_value` (monotone decrease, final size, penalty share).
pub fn convergence_report(
    model: &MultiWellModel,
    family: &RecoveryFamily,
    h_list: &[f64],
    limit_value: f64,
    n3: usize,
    criteria: ConvergenceCriteria,
) -> Result<ConvergenceReport> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let (elastic, penalty) = rescaled_energy_3d(model, family, h, n3)?;
        let total = elastic + penalty;
        let gap = (total - limit_value).abs();
        let share = if total.abs() > 0.0 { penalty / total } else { 0.0 };
        let order = if let Some(prev) = rows.last() {
            if gap > 1e-15 && prev.gap > 1e-15 {
                (prev.gap / gap).ln() / (prev.h / h).ln()
            } else {
                f64::NAN
            }
        } else {
            f64::NAN
        };
        rows.push(ConvergenceRow {
            h,
            elastic,
            penalty,
            gap,
            share,
            order,
        });
    }

    const TINY: f64 = 1e-14;
    let gaps_decreasing = rows
        .windows(2)
        .all(|w| w[1].gap <= w[0].gap * (1.0 + 1e-9) + TINY);
    let shares_decreasing = rows
        .windows(2)
        .all(|w| w[1].share <= w[0].share * (1.0 + 1e-9) + TINY);
    let last = rows.last().expect("nonempty h list");
    let gap_ok = if limit_value.abs() > 0.0 {
        last.gap <= criteria.gap_fraction * limit_value.abs()
    } else {
        last.gap <= criteria.zero_floor
    };
    let share_ok = last.share <= criteria.share_limit;
    let pass = gaps_decreasing && shares_decreasing && gap_ok && share_ok;

    // Fitted order over rows with meaningful gaps.
    let usable: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.gap > 1e-14).collect();
    let fitted_order = if usable.len() >= 2 {
        let n = usable.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for r in &usable {
            let lx = r.h.ln();
            let ly = r.gap.ln();
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    } else {
        None
    };

    Ok(ConvergenceReport {
        rows,
        limit: limit_value,
        fitted_order,
        pass,
        gap_fraction: criteria.gap_fraction,
        share_limit: criteria.share_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::hessian_q;
    use crate::functionals::{energy_lvk, energy_vk, PlateState};
    use crate::geometry::profile::CosArc;
    use approx::assert_relative_eq;

    fn identity_model_form() -> (MultiWellModel, RelaxedForm) {
        let model = MultiWellModel::identity_green_lagrange();
        let form = RelaxedForm::new(hessian_q(&model, 0).unwrap(), *model.well(0)).unwrap();
        (model, form)
    }

    #[test]
    fn schedule_windows() {
        let s = make_schedule(2.0, 4.0, 2.0).unwrap();
        assert_relative_eq!(s.s_min, 0.5, epsilon = 1e-14);
        assert_relative_eq!(s.s_max, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(s.s, 7.0 / 12.0, epsilon = 1e-14);
        assert!(!s.auto_raised_p);

        let s = make_schedule(6.0, 4.0, 2.0).unwrap();
        assert_relative_eq!(s.s_min, 0.0, epsilon = 1e-14);
        assert_relative_eq!(s.s_max, 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.s, 1.0, epsilon = 1e-14);

        // p = 2 at alpha = 2 leaves an empty window; p is raised.
        let s = make_schedule(2.0, 2.0, 2.0).unwrap();
        assert!(s.auto_raised_p);
        assert!(s.p > 2.0);
        assert!(s.s_min < s.s && s.s < s.s_max);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre_half(5);
        // int x^k over (-1/2, 1/2).
        for k in 0..=9 {
            let exact = if k % 2 == 1 {
                0.0
            } else {
                2.0 * 0.5f64.powi(k + 1) / (k as f64 + 1.0)
            };
            let approx_val: f64 = rule.iter().map(|&(x, w)| w * x.powi(k)).sum();
            assert!(
                (approx_val - exact).abs() < 1e-15,
                "degree {k}: {approx_val} vs {exact}"
            );
        }
    }

    #[test]
    fn lvk_ground_state_is_exact() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(21);
        let state = PlateState::zero(0, grid.clone());
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        for h in [0.1, 0.05] {
            let (elastic, penalty) = rescaled_energy_3d(&model, &family, h, 5).unwrap();
            assert!(elastic.abs() < 1e-12, "elastic {elastic}");
            assert!(penalty.abs() < 1e-12, "penalty {penalty}");
        }
    }

    #[test]
    fn lvk_family_converges_to_limit() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(61);
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x * x);
        let state =
            PlateState::displacement(0, Field::zeros(grid.clone(), FieldRank::Vector2), v)
                .unwrap();
        let limit = energy_lvk(&state, &form);
        assert_relative_eq!(limit, 1.0 / 3.0, epsilon = 1e-9);
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let report = convergence_report(
            &model,
            &family,
            &[0.1, 0.05, 0.025, 0.0125],
            limit,
            5,
            ConvergenceCriteria::default(),
        )
        .unwrap();
        assert!(report.pass, "report {:?}", report.rows);
    }

    #[test]
    fn vk_family_with_compatible_pair() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(61);
        let u = Field::from_fn(grid.clone(), FieldRank::Vector2, |x, _, out| {
            out[0] = -2.0 / 3.0 * x * x * x;
        });
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x * x);
        let state = PlateState::displacement(0, u, v).unwrap();
        let limit = energy_vk(&state, &form);
        assert_relative_eq!(limit, 1.0 / 3.0, epsilon = 1e-8);
        let schedule = make_schedule(4.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Vk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let report = convergence_report(
            &model,
            &family,
            &[0.1, 0.05, 0.025, 0.0125],
            limit,
            5,
            ConvergenceCriteria::default(),
        )
        .unwrap();
        assert!(report.pass, "rows {:?}", report.rows);
    }

    #[test]
    fn kirchhoff_cylinder_family() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(61);
        let schedule = make_schedule(2.0, 10.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Kirchhoff,
            schedule,
            RecoveryInput::Profile {
                profile: Box::new(CosArc { radius: 2.0 }),
                direction: Vector2::new(1.0, 0.0),
            },
            grid,
        )
        .unwrap();
        let limit = 1.0 / 48.0;
        let (elastic, penalty) = rescaled_energy_3d(&model, &family, 0.05, 5).unwrap();
        assert!(
            (elastic - limit).abs() < 0.1 * limit,
            "elastic {elastic} vs {limit}"
        );
        assert!(penalty / (elastic + penalty) < 0.05);
        // Halving h shrinks the gap (monotone trend).
        let mut prev = f64::INFINITY;
        for h in [0.1, 0.05, 0.025, 0.0125] {
            let (e, p) = rescaled_energy_3d(&model, &family, h, 5).unwrap();
            let gap = (e + p - limit).abs();
            assert!(gap <= prev * (1.0 + 1e-9), "gap {gap} at h {h}");
            prev = gap;
        }
    }

    #[test]
    fn cvk_profile_family_metric_is_exact() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(41);
        let schedule = make_schedule(3.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Cvk,
            schedule,
            RecoveryInput::Profile {
                profile: Box::new(CosArc { radius: 2.0 }),
                direction: Vector2::new(1.0, 0.0),
            },
            grid,
        )
        .unwrap();
        for h in [0.1, 0.05, 0.025] {
            let prepared = family.prepare(h).unwrap();
            assert!(prepared.metric_residual.unwrap() < 1e-8);
        }
    }

    #[test]
    fn frame_indifference_of_energies() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(31);
        let v = Field::scalar_from_fn(grid.clone(), |x, y| 0.3 * x * x - 0.1 * x * y);
        let state =
            PlateState::displacement(0, Field::zeros(grid.clone(), FieldRank::Vector2), v)
                .unwrap();
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let mut family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let (e0, p0) = rescaled_energy_3d(&model, &family, 0.05, 5).unwrap();
        let mut rng = rand::SeedableRng::seed_from_u64(3);
        let r = crate::linalg::random_rotation::<rand_chacha::ChaCha8Rng>(&mut rng);
        family.set_frame(r);
        let (e1, p1) = rescaled_energy_3d(&model, &family, 0.05, 5).unwrap();
        assert!((e1 - e0).abs() <= 1e-10 * (1.0 + e0.abs()), "{e0} vs {e1}");
        assert!((p1 - p0).abs() <= 1e-10 * (1.0 + p0.abs()), "{p0} vs {p1}");
    }

    /// Non-diagonal well: the completion field xi = -2L(hess v) is nonzero
    /// and the family still converges to the limit at first order.
    #[test]
    fn lvk_with_active_completion_field() {
        let u = Well::new(Mat3::new(2.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        let model = MultiWellModel::new(
            vec![u],
            crate::energy::DensityKind::GreenLagrange,
            2.0,
            4.0,
            1.0,
        )
        .unwrap();
        let form = RelaxedForm::new(hessian_q(&model, 0).unwrap(), u).unwrap();
        let grid = MidplaneGrid::unit_square(61);
        let v = Field::scalar_from_fn(grid.clone(), |x, _| 0.25 * x * x);
        let state =
            PlateState::displacement(0, Field::zeros(grid.clone(), FieldRank::Vector2), v)
                .unwrap();
        assert!(form.l_operator(&Sym2::new(1.0, 0.0, 0.0, 0.0)).norm() > 0.1);
        let limit = energy_lvk(&state, &form);
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for h in [0.1, 0.05, 0.025, 0.0125] {
            let (e, p) = rescaled_energy_3d(&model, &family, h, 5).unwrap();
            let gap = (e + p - limit).abs();
            assert!(gap < prev, "gap {gap} at h={h}");
            prev = gap;
        }
        assert!(prev < 0.01 * limit, "final gap {prev} vs limit {limit}");
    }

    #[test]
    fn regime_input_mismatch_is_rejected() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(9);
        let state = PlateState::zero(0, grid.clone());
        let schedule = make_schedule(2.0, 4.0, model.q()).unwrap();
        let err = build_recovery(
            &model,
            &form,
            RegimeTag::Kirchhoff,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        );
        assert!(err.is_err());
    }

    #[test]
    fn wrong_limit_fails_the_report() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(41);
        let v = Field::scalar_from_fn(grid.clone(), |x, _| x * x);
        let state =
            PlateState::displacement(0, Field::zeros(grid.clone(), FieldRank::Vector2), v)
                .unwrap();
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let report = convergence_report(
            &model,
            &family,
            &[0.1, 0.05, 0.025, 0.0125],
            2.0,
            5,
            ConvergenceCriteria::default(),
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn ground_state_report_passes_with_zero_limit() {
        let (model, form) = identity_model_form();
        let grid = MidplaneGrid::unit_square(15);
        let state = PlateState::zero(0, grid.clone());
        let schedule = make_schedule(5.0, 4.0, model.q()).unwrap();
        let family = build_recovery(
            &model,
            &form,
            RegimeTag::Lvk,
            schedule,
            RecoveryInput::Displacement(&state),
            grid,
        )
        .unwrap();
        let report = convergence_report(
            &model,
            &family,
            &[0.1, 0.05, 0.025, 0.0125],
            0.0,
            5,
            ConvergenceCriteria::default(),
        )
        .unwrap();
        assert!(report.pass);
        for row in &report.rows {
            assert!(row.gap < 1e-12);
        }
    }
}
