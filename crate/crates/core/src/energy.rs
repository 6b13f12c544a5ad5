//! Multi-well elastic energy densities, their hypothesis checks, and the
//! quadratic forms obtained by linearizing at each well.

use nalgebra::SMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PlateError, Result};
use crate::linalg::{self, dist_to_well, sym, Mat3, Well};

/// Built-in density families.
///
/// `CanonicalDist` is `min_j f_q(dist(F, K_j))` with `f_q(t) = min(t^2, t^q)`;
/// `GreenLagrange` is `min_j 1/4 |U_j^-1 F^T F U_j^-1 - Id|^2`, which has a
/// closed-form Hessian at each well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    CanonicalDist,
    GreenLagrange,
}

/// A multi-well energy density: wells, density family, growth exponent `q`,
/// penalty exponent `p`, and the lower-bound scale `C`.
#[derive(Debug, Clone)]
pub struct MultiWellModel {
    wells: Vec<Well>,
    kind: DensityKind,
    q: f64,
    p: f64,
    well_scale: f64,
}

const DISJOINTNESS_TOL: f64 = 1e-8;

impl MultiWellModel {
    pub fn new(wells: Vec<Well>, kind: DensityKind, q: f64, p: f64, well_scale: f64) -> Result<Self> {
        if wells.is_empty() {
            return Err(PlateError::InvalidModel("at least one well is required".into()));
        }
        if !(0.0..=2.0).contains(&q) {
            return Err(PlateError::InvalidModel(format!("q = {q} must lie in [0, 2]")));
        }
        if p <= 1.0 {
            return Err(PlateError::InvalidModel(format!("p = {p} must exceed 1")));
        }
        if q < 2.0 && p <= 6.0 / 5.0 {
            return Err(PlateError::InvalidModel(format!(
                "p = {p} must exceed 6/5 when q = {q} < 2"
            )));
        }
        if well_scale <= 0.0 {
            return Err(PlateError::InvalidModel("well scale C must be positive".into()));
        }
        // Disjointness: U_j^-1 U_i must stay away from SO(3).
        for i in 0..wells.len() {
            for j in 0..wells.len() {
                if i == j {
                    continue;
                }
                let m = wells[j].inverse() * wells[i].matrix();
                let sv = m.svd(false, false).singular_values;
                let dev = ((sv[0] - 1.0).powi(2) + (sv[1] - 1.0).powi(2) + (sv[2] - 1.0).powi(2))
                    .sqrt();
                if dev <= DISJOINTNESS_TOL {
                    return Err(PlateError::InvalidModel(format!(
                        "wells {i} and {j} are not disjoint (singular-value deviation {dev:.3e})"
                    )));
                }
            }
        }
        Ok(MultiWellModel {
            wells,
            kind,
            q,
            p,
            well_scale,
        })
    }

    /// Single-well Green-Lagrange model around the identity.
    pub fn identity_green_lagrange() -> Self {
        MultiWellModel::new(vec![Well::identity()], DensityKind::GreenLagrange, 2.0, 4.0, 1.0)
            .expect("valid model")
    }

    pub fn wells(&self) -> &[Well] {
        &self.wells
    }

    pub fn well(&self, j: usize) -> &Well {
        &self.wells[j]
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn well_scale(&self) -> f64 {
        self.well_scale
    }

    /// `f_q(t) = min(t^2, t^q)`.
    pub fn f_q(&self, t: f64) -> f64 {
        let t = t.abs();
        if self.q == 2.0 {
            t * t
        } else {
            (t * t).min(t.powf(self.q))
        }
    }

    /// Density value at a deformation gradient.
    pub fn evaluate(&self, f: &Mat3) -> f64 {
        match self.kind {
            DensityKind::CanonicalDist => self
                .wells
                .iter()
                .map(|w| self.f_q(dist_to_well(f, w)))
                .fold(f64::INFINITY, f64::min),
            DensityKind::GreenLagrange => self
                .wells
                .iter()
                .map(|w| {
                    let c = w.inverse() * (f.transpose() * f) * w.inverse();
                    0.25 * (c - Mat3::identity()).norm_squared()
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Distance to the union of wells.
    pub fn dist_to_k(&self, f: &Mat3) -> f64 {
        self.wells
            .iter()
            .map(|w| dist_to_well(f, w))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric quadratic form on 3x3 matrices, stored as a 9x9 coefficient
/// matrix acting on row-major vectorizations.
#[derive(Debug, Clone)]
pub struct QuadraticForm3 {
    coeffs: SMatrix<f64, 9, 9>,
    well_index: usize,
}

fn vec9(a: &Mat3) -> SMatrix<f64, 9, 1> {
    SMatrix::<f64, 9, 1>::from_fn(|k, _| a[(k / 3, k % 3)])
}

fn mat9(k: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    m[(k / 3, k % 3)] = 1.0;
    m
}

impl QuadraticForm3 {
    /// Builds the form from an evaluation callback by polarization.
    pub fn from_evaluations<F: FnMut(&Mat3) -> f64>(mut q: F, well_index: usize) -> Self {
        let mut coeffs = SMatrix::<f64, 9, 9>::zeros();
        let mut diag = [0.0; 9];
        for (k, d) in diag.iter_mut().enumerate() {
            *d = q(&mat9(k));
        }
        for k in 0..9 {
            coeffs[(k, k)] = diag[k];
            for l in (k + 1)..9 {
                let v = 0.5 * (q(&(mat9(k) + mat9(l))) - diag[k] - diag[l]);
                coeffs[(k, l)] = v;
                coeffs[(l, k)] = v;
            }
        }
        QuadraticForm3 { coeffs, well_index }
    }

    pub fn well_index(&self) -> usize {
        self.well_index
    }

    pub fn coefficients(&self) -> &SMatrix<f64, 9, 9> {
        &self.coeffs
    }

    /// `Q(A)`.
    pub fn apply(&self, a: &Mat3) -> f64 {
        let v = vec9(a);
        (v.transpose() * self.coeffs * v)[(0, 0)]
    }

    /// Associated bilinear form `B(A, B)` with `B(A, A) = Q(A)`.
    pub fn bilinear(&self, a: &Mat3, b: &Mat3) -> f64 {
        let va = vec9(a);
        let vb = vec9(b);
        (va.transpose() * self.coeffs * vb)[(0, 0)]
    }

    /// Smallest eigenvalue of `S -> Q(U^-1 S)` over symmetric `S`, the
    /// coercivity constant of the well linearization.
    pub fn coercivity_on_symmetric(&self, well: &Well) -> f64 {
        // Orthonormal basis of symmetric matrices.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let basis: [Mat3; 6] = [
            Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Mat3::new(0.0, s, 0.0, s, 0.0, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(0.0, 0.0, s, 0.0, 0.0, 0.0, s, 0.0, 0.0),
            Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, s, 0.0, s, 0.0),
        ];
        let mut g = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..6 {
            for j in 0..6 {
                g[(i, j)] = self.bilinear(
                    &(well.inverse() * basis[i]),
                    &(well.inverse() * basis[j]),
                );
            }
        }
        let g = 0.5 * (g + g.transpose());
        g.symmetric_eigenvalues().min()
    }
}

/// Analytic Hessian of the Green-Lagrange density at well `j`:
/// `Q_j(A) = 2 |U_j^-1 sym(U_j A) U_j^-1|^2`.
fn green_lagrange_hessian(model: &MultiWellModel, j: usize) -> QuadraticForm3 {
    let u = *model.well(j).matrix();
    let u_inv = *model.well(j).inverse();
    QuadraticForm3::from_evaluations(
        |a: &Mat3| {
            let m = u_inv * sym(&(u * a)) * u_inv;
            2.0 * m.norm_squared()
        },
        j,
    )
}

const FD_STEP: f64 = 1e-4;
const FD_CONVERGENCE_TOL: f64 = 1e-4;

/// Finite-difference Hessian with one Richardson halving (steps 1e-4, 5e-5).
fn finite_difference_hessian(model: &MultiWellModel, j: usize) -> Result<QuadraticForm3> {
    let u = *model.well(j).matrix();
    let q_at = |a: &Mat3, eps: f64| -> f64 {
        (model.evaluate(&(u + eps * a)) + model.evaluate(&(u - eps * a))) / (eps * eps)
    };
    let richardson = |a: &Mat3| -> (f64, f64) {
        let q1 = q_at(a, FD_STEP);
        let q2 = q_at(a, 0.5 * FD_STEP);
        ((4.0 * q2 - q1) / 3.0, (q2 - q1).abs())
    };
    // Convergence of the two refinement levels, probed on the matrix basis.
    let mut worst = 0.0f64;
    for k in 0..9 {
        let (val, res) = richardson(&mat9(k));
        let scale = 1.0 + val.abs();
        worst = worst.max(res / scale);
    }
    if worst > FD_CONVERGENCE_TOL {
        return Err(PlateError::HessianNotConverged {
            well: j,
            residual: worst,
        });
    }
    Ok(QuadraticForm3::from_evaluations(|a| richardson(a).0, j))
}

/// The quadratic form `D^2 W(U_j)`, analytic for Green-Lagrange densities and
/// finite-difference (with Richardson extrapolation) otherwise.
pub fn hessian_q(model: &MultiWellModel, j: usize) -> Result<QuadraticForm3> {
    assert!(j < model.wells().len(), "well index out of range");
    match model.kind() {
        DensityKind::GreenLagrange => Ok(green_lagrange_hessian(model, j)),
        DensityKind::CanonicalDist => finite_difference_hessian(model, j),
    }
}

/// Per-well diagnostics of [`check_hypotheses`].
#[derive(Debug, Clone, Serialize)]
pub struct WellReport {
    pub well: usize,
    /// `W(U_j)`, which must vanish.
    pub zero_at_well: f64,
    /// Max over random A of `|Q_j(A) - Q_j(U_j^-1 sym(U_j A))|`.
    pub symmetry_residual: f64,
    /// Smallest eigenvalue of the symmetric restriction; positive under
    /// coercivity.
    pub coercivity_lambda: f64,
}

/// Hypothesis report: per-well zeros, frame indifference, the lower bound,
/// and quadratic-form symmetry/coercivity diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub wells: Vec<WellReport>,
    /// Max over random (R, F) of `|W(RF) - W(F)|`.
    pub frame_indifference_residual: f64,
    /// Empirical best constant in `W(F) >= C f_q(dist(F, K))`.
    pub lower_bound_constant: f64,
    /// Whether the empirical constant meets the model's declared scale.
    pub lower_bound_ok: bool,
    pub wells_disjoint: bool,
    pub all_passed: bool,
}

/// Validates (W1)-(W4) style hypotheses on random samples and reports the
/// symmetry and coercivity diagnostics of each well form.
pub fn check_hypotheses(model: &MultiWellModel, seed: u64) -> Result<HypothesisReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut frame_res = 0.0f64;
    for _ in 0..100 {
        let f = linalg::random_matrix(&mut rng);
        let r = linalg::random_rotation(&mut rng);
        frame_res = frame_res.max((model.evaluate(&(r * f)) - model.evaluate(&f)).abs());
    }

    let mut lower_c = f64::INFINITY;
    for _ in 0..1000 {
        let f = linalg::random_matrix(&mut rng);
        let d = model.dist_to_k(&f);
        let fq = model.f_q(d);
        if fq > 1e-12 {
            lower_c = lower_c.min(model.evaluate(&f) / fq);
        }
    }

    let mut wells = Vec::new();
    for j in 0..model.wells().len() {
        let q = hessian_q(model, j)?;
        let u = model.well(j);
        let mut sym_res = 0.0f64;
        for _ in 0..100 {
            let a = linalg::random_matrix(&mut rng);
            let reduced = u.inverse() * sym(&(u.matrix() * a));
            sym_res = sym_res.max((q.apply(&a) - q.apply(&reduced)).abs());
        }
        wells.push(WellReport {
            well: j,
            zero_at_well: model.evaluate(u.matrix()),
            symmetry_residual: sym_res,
            coercivity_lambda: q.coercivity_on_symmetric(u),
        });
    }

    // Disjointness was enforced at construction; re-probe it for the report.
    let wells_disjoint = {
        let mut ok = true;
        'outer: for i in 0..model.wells().len() {
            for j in 0..model.wells().len() {
                if i != j {
                    let m = model.well(j).inverse() * model.well(i).matrix();
                    let sv = m.svd(false, false).singular_values;
                    let dev = ((sv[0] - 1.0).powi(2)
                        + (sv[1] - 1.0).powi(2)
                        + (sv[2] - 1.0).powi(2))
                    .sqrt();
                    if dev <= DISJOINTNESS_TOL {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        ok
    };

    let lower_bound_ok = lower_c.is_finite() && lower_c > 0.0;
    let all_passed = wells_disjoint
        && frame_res < 1e-10
        && lower_bound_ok
        && wells.iter().all(|w| {
            w.zero_at_well < 1e-12 && w.symmetry_residual < 1e-8 && w.coercivity_lambda > 0.0
        });

    Ok(HypothesisReport {
        wells,
        frame_indifference_residual: frame_res,
        lower_bound_constant: lower_c,
        lower_bound_ok,
        wells_disjoint,
        all_passed,
    })
}
