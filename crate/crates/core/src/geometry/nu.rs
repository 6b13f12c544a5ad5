//! The unique normal field making `(grad y, nu) U^-1` a rotation, for
//! isometric immersions of the flat metric `(U^2)'`.

use nalgebra::Matrix3x2;

use crate::error::{PlateError, Result};
use crate::geometry::grid::{Field, FieldRank};
use crate::linalg::{Mat3, Vec3, Well};

/// Reads a 3x2 matrix block (row-major) from a 6-component field.
pub fn mat32_at(field: &Field, node: usize) -> Matrix3x2<f64> {
    let b = field.block(node);
    Matrix3x2::new(b[0], b[1], b[2], b[3], b[4], b[5])
}

/// Writes a 3x2 matrix block (row-major) into a 6-component field.
pub fn set_mat32(field: &mut Field, node: usize, m: &Matrix3x2<f64>) {
    let b = field.block_mut(node);
    b[0] = m[(0, 0)];
    b[1] = m[(0, 1)];
    b[2] = m[(1, 0)];
    b[3] = m[(1, 1)];
    b[4] = m[(2, 0)];
    b[5] = m[(2, 1)];
}

/// Assembles `(grad y, nu)` as a 3x3 matrix.
pub fn frame(grad_y: &Matrix3x2<f64>, nu: &Vec3) -> Mat3 {
    Mat3::new(
        grad_y[(0, 0)],
        grad_y[(0, 1)],
        nu[0],
        grad_y[(1, 0)],
        grad_y[(1, 1)],
        nu[1],
        grad_y[(2, 0)],
        grad_y[(2, 1)],
        nu[2],
    )
}

const METRIC_PRE_TOL: f64 = 1e-6;
const FRAME_POST_TOL: f64 = 1e-9;

/// Metric residual `|grad y^T grad y - (U^2)'|` at one node.
fn metric_residual(grad_y: &Matrix3x2<f64>, u_sq: &Mat3) -> f64 {
    let g = grad_y.transpose() * grad_y;
    let mut r: f64 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            r += (g[(a, b)] - u_sq[(a, b)]).powi(2);
        }
    }
    r.sqrt()
}

/// Pointwise normal-vector formula
/// `nu = (det(U^-1) (d1y x d2y) - sum_k (U^-1 e_k . U^-1 e_3) d_k y) / |U^-1 e_3|^2`.
pub fn nu_at(grad_y: &Matrix3x2<f64>, well: &Well) -> Vec3 {
    let u_inv = well.inverse();
    let inv_e3 = well.inv_e3();
    let kappa_sq = inv_e3.norm_squared();
    let d1: Vec3 = grad_y.column(0).into();
    let d2: Vec3 = grad_y.column(1).into();
    let c1 = u_inv.column(0).dot(&inv_e3);
    let c2 = u_inv.column(1).dot(&inv_e3);
    (u_inv.determinant() * d1.cross(&d2) - c1 * d1 - c2 * d2) / kappa_sq
}

/// The normal field of an isometric immersion: checks the metric constraint
/// (within 1e-6 at every node), applies the explicit formula, and verifies
/// that `(grad y, nu)^T (grad y, nu) = U^2` with positive determinant.
pub fn normal_vector_nu(grad_y: &Field, well: &Well) -> Result<Field> {
    assert_eq!(grad_y.components(), 6, "expected a 3x2 matrix field");
    let u_sq = well.matrix() * well.matrix();
    let grid = grad_y.grid().clone();

    let mut worst = (0.0f64, 0usize);
    for node in 0..grad_y.node_count() {
        let r = metric_residual(&mat32_at(grad_y, node), &u_sq);
        if r > worst.0 {
            worst = (r, node);
        }
    }
    if worst.0 > METRIC_PRE_TOL {
        let (x, y) = grid.coords(worst.1);
        return Err(PlateError::MetricConstraint {
            x,
            y,
            residual: worst.0,
            tolerance: METRIC_PRE_TOL,
        });
    }

    let mut nu = Field::zeros(grid.clone(), FieldRank::Vector3);
    let mut worst_frame = (0.0f64, 0usize);
    for node in 0..grad_y.node_count() {
        let g = mat32_at(grad_y, node);
        let v = nu_at(&g, well);
        let f = frame(&g, &v);
        let res = (f.transpose() * f - u_sq).norm();
        if res > worst_frame.0 {
            worst_frame = (res, node);
        }
        if f.determinant() <= 0.0 {
            let (x, y) = grid.coords(node);
            return Err(PlateError::MetricConstraint {
                x,
                y,
                residual: f.determinant(),
                tolerance: 0.0,
            });
        }
        let out = nu.block_mut(node);
        out[0] = v[0];
        out[1] = v[1];
        out[2] = v[2];
    }
    // The metric pre-check admits residuals up to 1e-6; the frame identity
    // inherits them, so only flag genuinely inconsistent frames.
    if worst_frame.0 > FRAME_POST_TOL.max(10.0 * worst.0) {
        let (x, y) = grid.coords(worst_frame.1);
        return Err(PlateError::MetricConstraint {
            x,
            y,
            residual: worst_frame.0,
            tolerance: FRAME_POST_TOL,
        });
    }
    Ok(nu)
}

/// Residuals of the three scalar conditions pinning `nu` pointwise:
/// `d1y . nu = (U^2)_13`, `d2y . nu = (U^2)_23`, `nu . nu = (U^2)_33`.
pub fn nu_conditions_residual(grad_y: &Matrix3x2<f64>, nu: &Vec3, well: &Well) -> [f64; 3] {
    let u_sq = well.matrix() * well.matrix();
    let d1: Vec3 = grad_y.column(0).into();
    let d2: Vec3 = grad_y.column(1).into();
    [
        d1.dot(nu) - u_sq[(0, 2)],
        d2.dot(nu) - u_sq[(1, 2)],
        nu.dot(nu) - u_sq[(2, 2)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::grid::MidplaneGrid;
    use crate::linalg::Vec3;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3x2;

    fn grad_field<F: Fn(f64, f64) -> Matrix3x2<f64>>(
        grid: std::sync::Arc<MidplaneGrid>,
        f: F,
    ) -> Field {
        let mut out = Field::zeros(grid.clone(), FieldRank::Matrix(6));
        for node in 0..out.node_count() {
            let (x, y) = grid.coords(node);
            set_mat32(&mut out, node, &f(x, y));
        }
        out
    }

    #[test]
    fn flat_identity_embedding() {
        let grid = MidplaneGrid::unit_square(9);
        let g = grad_field(grid, |_, _| Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0));
        let nu = normal_vector_nu(&g, &Well::identity()).unwrap();
        for n in 0..nu.node_count() {
            assert_relative_eq!(nu.at(n, 0), 0.0, epsilon = 1e-14);
            assert_relative_eq!(nu.at(n, 1), 0.0, epsilon = 1e-14);
            assert_relative_eq!(nu.at(n, 2), 1.0, epsilon = 1e-14);
        }
    }

    /// Flat embedding of diag(1,1,2): nu = 2 e3 and (grad y, nu) U^-1 is a
    /// rotation.
    #[test]
    fn flat_stretched_embedding() {
        let grid = MidplaneGrid::unit_square(9);
        let u = Well::new(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 2.0))).unwrap();
        let g = grad_field(grid, |_, _| Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0));
        let nu = normal_vector_nu(&g, &u).unwrap();
        for n in 0..nu.node_count() {
            assert_relative_eq!(nu.at(n, 2), 2.0, epsilon = 1e-13);
        }
        let f = frame(
            &Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0),
            &Vec3::new(0.0, 0.0, 2.0),
        );
        let r = f * u.inverse();
        assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-14);
    }

    /// Unit cylinder: nu is the radial direction.
    #[test]
    fn cylinder_normal() {
        let grid = MidplaneGrid::unit_square(11);
        let g = grad_field(grid.clone(), |x, _| {
            Matrix3x2::new(x.cos(), 0.0, 0.0, 1.0, -x.sin(), 0.0)
        });
        let nu = normal_vector_nu(&g, &Well::identity()).unwrap();
        for n in 0..nu.node_count() {
            let (x, _) = grid.coords(n);
            assert_relative_eq!(nu.at(n, 0), x.sin(), epsilon = 1e-9);
            assert_relative_eq!(nu.at(n, 1), 0.0, epsilon = 1e-9);
            assert_relative_eq!(nu.at(n, 2), x.cos(), epsilon = 1e-9);
        }
    }

    #[test]
    fn metric_violation_is_reported() {
        let grid = MidplaneGrid::unit_square(7);
        let g = grad_field(grid, |_, _| Matrix3x2::new(1.1, 0.0, 0.0, 1.0, 0.0, 0.0));
        let err = normal_vector_nu(&g, &Well::identity());
        assert!(matches!(err, Err(PlateError::MetricConstraint { .. })));
    }

    #[test]
    fn nu_conditions_pin_the_solution() {
        let grid = MidplaneGrid::unit_square(9);
        let u = Well::new(Mat3::new(1.2, 0.0, 0.3, 0.0, 1.0, 0.0, 0.3, 0.0, 1.5)).unwrap();
        // Flat embedding for the metric (U^2)': columns of the square root of
        // the 2x2 block extended by zero third row.
        let u_sq = u.matrix() * u.matrix();
        let block = nalgebra::Matrix2::new(u_sq[(0, 0)], u_sq[(0, 1)], u_sq[(1, 0)], u_sq[(1, 1)]);
        let eig = block.symmetric_eigen();
        let sqrt_block = eig.eigenvectors
            * nalgebra::Matrix2::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt()))
            * eig.eigenvectors.transpose();
        let g = grad_field(grid, |_, _| {
            Matrix3x2::new(
                sqrt_block[(0, 0)],
                sqrt_block[(0, 1)],
                sqrt_block[(1, 0)],
                sqrt_block[(1, 1)],
                0.0,
                0.0,
            )
        });
        let nu = normal_vector_nu(&g, &u).unwrap();
        for n in [0, 17, 44] {
            let nv = Vec3::new(nu.at(n, 0), nu.at(n, 1), nu.at(n, 2));
            let res = nu_conditions_residual(&mat32_at(&g, n), &nv, &u);
            for r in res {
                assert!(r.abs() < 1e-9, "condition residual {r}");
            }
        }
    }
}
