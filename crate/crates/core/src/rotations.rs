//! Dead-load functionals on the wells, their maximizer sets inside SO(3),
//! tangent/normal decompositions, intrinsic projections, and the assembled
//! limit objectives with rotation-fluctuation penalties.

use serde::Serialize;

use crate::error::{PlateError, Result};
use crate::functionals::{
    energy_cvk, energy_lvk, energy_vk, force_work, LoadField, PlateState,
};
use crate::linalg::{exp_skew, log_rotation, procrustes_max, Mat3, Skew3, Vec3, Well};
use crate::recovery::{gauss_legendre_half, RegimeTag};
use crate::relaxed::RelaxedForm;

/// Moment matrix of a dead load against one well: `F(R U_j) = trace(R^T M_j)`.
#[derive(Debug, Clone, Copy)]
pub struct MomentMatrix {
    pub well_index: usize,
    pub matrix: Mat3,
}

impl MomentMatrix {
    /// Explicit matrix (used when the moment is prescribed analytically).
    pub fn from_matrix(well_index: usize, matrix: Mat3) -> Self {
        MomentMatrix { well_index, matrix }
    }
}

/// `M_j = int_S f x (U_j (x', 0)) dx`, with exact moments for polynomial
/// loads and trapezoid quadrature for sampled ones.
pub fn moment_matrix(load: &LoadField, well: &Well, well_index: usize) -> MomentMatrix {
    let p = load.first_moments();
    let u = well.matrix();
    let mut m = Mat3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            m[(i, k)] = p[(i, 0)] * u[(k, 0)] + p[(i, 1)] * u[(k, 1)];
        }
    }
    MomentMatrix {
        well_index,
        matrix: m,
    }
}

/// Independent quadrature route for `F(R U_j) = int f . R U_j (x', 0) dx`:
/// tensor Gauss-Legendre for polynomial loads (exact through cubics),
/// trapezoid weights for sampled ones.
pub fn functional_direct(load: &LoadField, well: &Well, r: &Mat3) -> f64 {
    let grid = load.grid();
    let ru = r * well.matrix();
    let mut acc = 0.0;
    if load.is_polynomial() {
        let rule_x: Vec<(f64, f64)> = gauss_legendre_half(4)
            .into_iter()
            .map(|(t, w)| {
                let mid = 0.5 * (grid.x0 + grid.x1);
                let len = grid.x1 - grid.x0;
                (mid + t * len, w * len)
            })
            .collect();
        let rule_y: Vec<(f64, f64)> = gauss_legendre_half(4)
            .into_iter()
            .map(|(t, w)| {
                let mid = 0.5 * (grid.y0 + grid.y1);
                let len = grid.y1 - grid.y0;
                (mid + t * len, w * len)
            })
            .collect();
        for &(x, wx) in &rule_x {
            for &(y, wy) in &rule_y {
                let f = load.value_at_point(x, y);
                let pos = ru * Vec3::new(x, y, 0.0);
                acc += wx * wy * f.dot(&pos);
            }
        }
    } else {
        for node in 0..grid.node_count() {
            let w = grid.weight(node);
            if w == 0.0 {
                continue;
            }
            let (x, y) = grid.coords(node);
            acc += w * load.value_at(node).dot(&(ru * Vec3::new(x, y, 0.0)));
        }
    }
    acc
}

/// A maximizer set of `R -> F(R U_j)` over SO(3): optimal value, one
/// representative, the second-variation form, and tangent/normal axial bases.
#[derive(Debug, Clone, Serialize)]
pub struct RotationSet {
    pub well_index: usize,
    pub value: f64,
    /// Row-major representative maximizer.
    pub representative: [[f64; 3]; 3],
    /// Second-variation matrix `N = sym(R*^T M) - value Id` on axial vectors:
    /// `F(R* W^2 U_j) = w^T N w`.
    pub n_matrix: [[f64; 3]; 3],
    /// Nullity of N at relative tolerance 1e-9: the dimension of the set.
    pub dimension: usize,
    pub tangent_axials: Vec<[f64; 3]>,
    pub normal_axials: Vec<[f64; 3]>,
    #[serde(skip)]
    moment: Mat3,
    #[serde(skip)]
    rep: Mat3,
    #[serde(skip)]
    n_mat: Mat3,
    #[serde(skip)]
    tangent_vecs: Vec<Vec3>,
    #[serde(skip)]
    normal_vecs: Vec<Vec3>,
}

fn to_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

const NULLITY_REL_TOL: f64 = 1e-9;

/// Builds the maximizer set of one moment matrix.
pub fn rotation_set(moment: &MomentMatrix) -> RotationSet {
    let pm = procrustes_max(&moment.matrix);
    let rep = pm.rotation;
    let sym_rm = {
        let rm = rep.transpose() * moment.matrix;
        0.5 * (rm + rm.transpose())
    };
    let n = sym_rm - pm.value * Mat3::identity();
    let eig = n.symmetric_eigen();
    let scale = n.norm().max(1e-300);
    let mut tangent = Vec::new();
    let mut normal = Vec::new();
    for k in 0..3 {
        let v: Vec3 = eig.eigenvectors.column(k).into();
        if eig.eigenvalues[k].abs() <= NULLITY_REL_TOL * scale || n.norm() == 0.0 {
            tangent.push(v);
        } else {
            normal.push(v);
        }
    }
    RotationSet {
        well_index: moment.well_index,
        value: pm.value,
        representative: to_rows(&rep),
        n_matrix: to_rows(&n),
        dimension: tangent.len(),
        tangent_axials: tangent.iter().map(|v| [v[0], v[1], v[2]]).collect(),
        normal_axials: normal.iter().map(|v| [v[0], v[1], v[2]]).collect(),
        moment: moment.matrix,
        rep,
        n_mat: n,
        tangent_vecs: tangent,
        normal_vecs: normal,
    }
}

impl RotationSet {
    pub fn representative_matrix(&self) -> &Mat3 {
        &self.rep
    }

    pub fn moment(&self) -> &Mat3 {
        &self.moment
    }

    pub fn n(&self) -> &Mat3 {
        &self.n_mat
    }

    pub fn tangent_basis(&self) -> &[Vec3] {
        &self.tangent_vecs
    }

    pub fn normal_basis(&self) -> &[Vec3] {
        &self.normal_vecs
    }

    /// `F(R W U_j) = <W, R^T M>`; vanishes at a maximizer for skew W.
    pub fn first_variation(&self, w: &Skew3) -> f64 {
        let rm = self.rep.transpose() * self.moment;
        (w.matrix().transpose() * rm).trace()
    }

    /// `F(R W^2 U_j) = w^T N_R w` at a rotation of the set.
    pub fn second_variation_at(&self, r: &Mat3, w: &Skew3) -> f64 {
        let rm = r.transpose() * self.moment;
        let n = 0.5 * (rm + rm.transpose()) - rm.trace() * Mat3::identity();
        (w.w.transpose() * n * w.w)[(0, 0)]
    }

    /// Point of the set reached from the representative through tangent
    /// coordinates.
    pub fn point(&self, coords: &[f64]) -> Mat3 {
        let mut w = Vec3::zeros();
        for (c, t) in coords.iter().zip(self.tangent_vecs.iter()) {
            w += *c * t;
        }
        self.rep * exp_skew(&Skew3::new(w))
    }

    /// Whether `r` attains the optimal value (membership up to `tol`).
    pub fn contains(&self, r: &Mat3, tol: f64) -> bool {
        ((r.transpose() * self.moment).trace() - self.value).abs() <= tol * (1.0 + self.value.abs())
    }
}

/// Maximizes the load functional over every well: the per-well sets and the
/// winning index set within 1e-9 of the global maximum.
pub fn maximize_over_wells(moments: &[MomentMatrix]) -> (Vec<usize>, Vec<RotationSet>) {
    let sets: Vec<RotationSet> = moments.iter().map(rotation_set).collect();
    let best = sets
        .iter()
        .map(|s| s.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda = sets
        .iter()
        .enumerate()
        .filter(|(_, s)| (best - s.value).abs() <= 1e-9 * (1.0 + best.abs()))
        .map(|(k, _)| k)
        .collect();
    (lambda, sets)
}

/// Builds moments by quadrature and maximizes over the wells.
pub fn maximize_for_load(load: &LoadField, wells: &[Well]) -> (Vec<usize>, Vec<RotationSet>) {
    let moments: Vec<MomentMatrix> = wells
        .iter()
        .enumerate()
        .map(|(j, w)| moment_matrix(load, w, j))
        .collect();
    maximize_over_wells(&moments)
}

/// The dimension of a maximizer set (nullity of its second-variation form).
pub fn rotation_set_dimension(set: &RotationSet) -> usize {
    set.dimension
}

/// Result of the intrinsic projection onto a maximizer set.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Nearest point of the set.
    pub point: Mat3,
    /// Geodesic distance (axial norm of the connecting generator).
    pub distance: f64,
    /// Generator `w` with `R = P exp([w]_x)`, normal to the set.
    pub normal_generator: Skew3,
    /// Max |w . t| over the tangent axial basis (normality diagnostic).
    pub tangent_overlap: f64,
}

const PROJECTION_NEIGHBORHOOD: f64 = std::f64::consts::FRAC_PI_4;

fn geodesic_offset(p: &Mat3, r: &Mat3) -> Skew3 {
    log_rotation(&(p.transpose() * r))
}

/// Projects a rotation onto the set by minimizing the geodesic distance over
/// the exponential tangent parametrization (multistart compass search in at
/// most three coordinates).
pub fn project_to_set(r: &Mat3, set: &RotationSet) -> Result<Projection> {
    let m = set.dimension;
    let objective = |coords: &[f64]| -> f64 {
        let p = set.point(coords);
        geodesic_offset(&p, r).w.norm()
    };

    let best_coords = if m == 0 {
        vec![]
    } else {
        // 9 starts spread over the set's angular range per dimension.
        let starts: Vec<Vec<f64>> = match m {
            1 => (0..9)
                .map(|k| vec![-std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / 9.0])
                .collect(),
            2 => {
                let mut s = Vec::new();
                for i in 0..3 {
                    for j in 0..3 {
                        s.push(vec![
                            -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 3.0,
                            -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / 3.0,
                        ]);
                    }
                }
                s
            }
            _ => {
                let mut s = vec![vec![0.0; 3]];
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            s.push(vec![
                                -1.5 + 3.0 * i as f64,
                                -1.5 + 3.0 * j as f64,
                                -1.5 + 3.0 * k as f64,
                            ]);
                        }
                    }
                }
                s
            }
        };
        let mut best = (f64::INFINITY, vec![0.0; m]);
        for start in starts {
            let mut coords = start;
            let mut step = 0.5;
            let mut val = objective(&coords);
            while step > 1e-10 {
                let mut improved = false;
                for d in 0..m {
                    for sgn in [-1.0, 1.0] {
                        let mut trial = coords.clone();
                        trial[d] += sgn * step;
                        let tv = objective(&trial);
                        if tv < val {
                            val = tv;
                            coords = trial;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if val < best.0 {
                best = (val, coords);
            }
        }
        best.1
    };

    let point = set.point(&best_coords);
    let gen = geodesic_offset(&point, r);
    let distance = gen.w.norm();
    if distance > PROJECTION_NEIGHBORHOOD {
        return Err(PlateError::OutOfNeighborhood {
            distance,
            limit: PROJECTION_NEIGHBORHOOD,
        });
    }
    let tangent_overlap = set
        .tangent_vecs
        .iter()
        .map(|t| gen.w.dot(t).abs())
        .fold(0.0, f64::max);
    Ok(Projection {
        point,
        distance,
        normal_generator: gen,
        tangent_overlap,
    })
}

/// Assembled limit objective
/// `E(state) - int f . R U^-1 e3 v dx - F(R W^2 U_j)` for an admissible pair
/// `(R, W)`: `R` in the maximizer set and `W` normal to it.
#[allow(clippy::too_many_arguments)]
pub fn assemble_limit_objective(
    state: &PlateState,
    load: &LoadField,
    set: &RotationSet,
    regime: RegimeTag,
    form: &RelaxedForm,
    r: &Mat3,
    w: &Skew3,
) -> Result<f64> {
    if !set.contains(r, 1e-8) {
        return Err(PlateError::Inadmissible(
            "rotation does not attain the optimal value".into(),
        ));
    }
    let wn = w.w.norm();
    if wn > 0.0 {
        let overlap = set
            .tangent_vecs
            .iter()
            .map(|t| w.w.dot(t).abs())
            .fold(0.0, f64::max);
        if overlap > 1e-8 * wn {
            return Err(PlateError::Inadmissible(
                "fluctuation generator is not normal to the set".into(),
            ));
        }
    }
    let energy = match regime {
        RegimeTag::Vk => energy_vk(state, form),
        RegimeTag::Lvk => energy_lvk(state, form),
        RegimeTag::Cvk => energy_cvk(state, form)?,
        RegimeTag::Kirchhoff => {
            return Err(PlateError::Inadmissible(
                "the Kirchhoff objective carries no rotation term".into(),
            ))
        }
    };
    let work = force_work(state, load, r, form.well());
    let fluctuation = set.second_variation_at(r, w);
    Ok(energy - work - fluctuation)
}
