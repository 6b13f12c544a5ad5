//! Relaxation of a well form over affine out-of-plane completions: the 2x2
//! form `Qbar_j(D) = min_a Q_j(U_j^-1 (D + a x e3 + e3 x a))` and the linear
//! minimizer map `L_j`.

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector3};

use crate::energy::QuadraticForm3;
use crate::error::{PlateError, Result};
use crate::linalg::{Mat3, Vec3, Well};

/// Symmetric 2x2 matrix.
pub type Sym2 = Matrix2<f64>;

/// Embeds a 2x2 matrix into the upper-left block of a 3x3 matrix.
pub fn embed2(d: &Sym2) -> Mat3 {
    let mut m = Mat3::zeros();
    m[(0, 0)] = d[(0, 0)];
    m[(0, 1)] = d[(0, 1)];
    m[(1, 0)] = d[(1, 0)];
    m[(1, 1)] = d[(1, 1)];
    m
}

/// `a x e3 + e3 x a` for a 3-vector `a`.
fn completion(a: &Vec3) -> Mat3 {
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    a * e3.transpose() + e3 * a.transpose()
}

/// The relaxed quadratic form of one well, with the optimality system
/// assembled and factorized once.
#[derive(Debug, Clone)]
pub struct RelaxedForm {
    form: QuadraticForm3,
    well: Well,
    /// Inverse Gram matrix of the completion directions, `G_ik = B(M_i, M_k)`.
    gram_inv: Matrix3<f64>,
    /// Completion directions `M_i = U^-1 (e_i x e3 + e3 x e_i)`.
    dirs: [Mat3; 3],
    /// `L` as a 3x3 matrix on the symmetric basis (D11, D22, D12).
    l_matrix: Matrix3<f64>,
    /// `Qbar` coefficients on the same basis.
    qbar_coeffs: Matrix3<f64>,
}

fn sym2_basis(k: usize) -> Sym2 {
    match k {
        0 => Sym2::new(1.0, 0.0, 0.0, 0.0),
        1 => Sym2::new(0.0, 0.0, 0.0, 1.0),
        _ => Sym2::new(0.0, 1.0, 1.0, 0.0),
    }
}

impl RelaxedForm {
    pub fn new(form: QuadraticForm3, well: Well) -> Result<Self> {
        let mut dirs = [Mat3::zeros(); 3];
        for (i, d) in dirs.iter_mut().enumerate() {
            let mut e = Vec3::zeros();
            e[i] = 1.0;
            *d = well.inverse() * completion(&e);
        }
        let mut gram = Matrix3::zeros();
        for i in 0..3 {
            for k in 0..3 {
                gram[(i, k)] = form.bilinear(&dirs[i], &dirs[k]);
            }
        }
        let gram = 0.5 * (gram + gram.transpose());
        let gram_inv = gram.try_inverse().ok_or(PlateError::SingularOptimalitySystem {
            well: form.well_index(),
        })?;
        if gram.symmetric_eigenvalues().min() <= 0.0 {
            return Err(PlateError::SingularOptimalitySystem {
                well: form.well_index(),
            });
        }

        let mut partial = RelaxedForm {
            form,
            well,
            gram_inv,
            dirs,
            l_matrix: Matrix3::zeros(),
            qbar_coeffs: Matrix3::zeros(),
        };
        let mut l_matrix = Matrix3::zeros();
        for k in 0..3 {
            let a = partial.solve_minimizer(&sym2_basis(k));
            l_matrix.set_column(k, &a);
        }
        partial.l_matrix = l_matrix;

        // Qbar coefficients by polarization on (D11, D22, D12).
        let mut diag = [0.0; 3];
        for (k, d) in diag.iter_mut().enumerate() {
            *d = partial.evaluate(&sym2_basis(k));
        }
        let mut qc = Matrix3::zeros();
        for k in 0..3 {
            qc[(k, k)] = diag[k];
            for l in (k + 1)..3 {
                let sum = sym2_basis(k) + sym2_basis(l);
                let v = 0.5 * (partial.evaluate(&sum) - diag[k] - diag[l]);
                qc[(k, l)] = v;
                qc[(l, k)] = v;
            }
        }
        partial.qbar_coeffs = qc;
        Ok(partial)
    }

    pub fn well(&self) -> &Well {
        &self.well
    }

    pub fn well_index(&self) -> usize {
        self.form.well_index()
    }

    pub fn source_form(&self) -> &QuadraticForm3 {
        &self.form
    }

    fn solve_minimizer(&self, d: &Sym2) -> Vec3 {
        let a0 = self.well.inverse() * embed2(&(0.5 * (d + d.transpose())));
        let g = Vec3::new(
            self.form.bilinear(&a0, &self.dirs[0]),
            self.form.bilinear(&a0, &self.dirs[1]),
            self.form.bilinear(&a0, &self.dirs[2]),
        );
        -(self.gram_inv * g)
    }

    /// The minimizing completion vector `a = L(D)`.
    pub fn l_operator(&self, d: &Sym2) -> Vec3 {
        // D = D11 B0 + D22 B1 + D12 B2 on the basis used for `l_matrix`.
        let ds = 0.5 * (d + d.transpose());
        self.l_matrix * Vector3::new(ds[(0, 0)], ds[(1, 1)], ds[(0, 1)])
    }

    /// `L` on the basis (D11, D22, D12); column `k` is `L` of the k-th basis
    /// matrix.
    pub fn l_matrix(&self) -> &Matrix3<f64> {
        &self.l_matrix
    }

    /// The full 3x3 argument `U^-1 (D + a x e3 + e3 x a)` at the minimizer.
    pub fn minimizing_argument(&self, d: &Sym2) -> Mat3 {
        let ds = 0.5 * (d + d.transpose());
        let a = self.l_operator(&ds);
        self.well.inverse() * (embed2(&ds) + completion(&a))
    }

    /// `Qbar(D)`.
    pub fn evaluate(&self, d: &Sym2) -> f64 {
        self.form.apply(&self.minimizing_argument(d))
    }

    /// Gradient of `Qbar` as a symmetric 2x2 matrix: `Qbar(D + E) =
    /// Qbar(D) + <grad, E> + Qbar(E)` for symmetric E.
    pub fn gradient(&self, d: &Sym2) -> Sym2 {
        let ds = 0.5 * (d + d.transpose());
        let v = Vector3::new(ds[(0, 0)], ds[(1, 1)], ds[(0, 1)]);
        let g = self.qbar_coeffs * v;
        // d/dD11 = 2 (C v)_1, d/dD12 shares the off-diagonal weight.
        Sym2::new(2.0 * g[0], g[2], g[2], 2.0 * g[1])
    }

    /// `Qbar` coefficients on (D11, D22, D12).
    pub fn qbar_coefficients(&self) -> &Matrix3<f64> {
        &self.qbar_coeffs
    }

    /// Residuals of the three stationarity conditions at the minimizer.
    pub fn stationarity_residual(&self, d: &Sym2) -> f64 {
        let arg = self.minimizing_argument(d);
        (0..3)
            .map(|i| 2.0 * self.form.bilinear(&arg, &self.dirs[i]))
            .fold(0.0f64, |acc, r| acc.max(r.abs()))
    }
}

/// 9x9 coefficients of `Qbar` padded onto full 3x3 arguments are not needed;
/// reports expose the 3x3 basis coefficients instead.
pub type QbarCoefficients = SMatrix<f64, 3, 3>;
