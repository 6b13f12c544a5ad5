//! Bivariate polynomials up to cubic degree, with exact rectangle integrals.
//!
//! Basis order: `1, x1, x2, x1^2, x1 x2, x2^2, x1^3, x1^2 x2, x1 x2^2, x2^3`.

use serde::{Deserialize, Serialize};

/// Exponent pairs of the cubic basis.
pub const BASIS: [(u32, u32); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

/// Polynomial in two variables, degree at most 3.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Poly2 {
    /// Coefficients on [`BASIS`]; shorter vectors are zero-padded.
    pub coeffs: Vec<f64>,
}

impl Poly2 {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(coeffs.len() <= 10, "cubic basis has 10 coefficients");
        Poly2 { coeffs }
    }

    pub fn zero() -> Self {
        Poly2 { coeffs: vec![] }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(BASIS.iter())
            .map(|(&c, &(i, j))| c * x1.powi(i as i32) * x2.powi(j as i32))
            .sum()
    }

    pub fn grad(&self, x1: f64, x2: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (&c, &(i, j)) in self.coeffs.iter().zip(BASIS.iter()) {
            if i > 0 {
                d1 += c * i as f64 * x1.powi(i as i32 - 1) * x2.powi(j as i32);
            }
            if j > 0 {
                d2 += c * j as f64 * x1.powi(i as i32) * x2.powi(j as i32 - 1);
            }
        }
        (d1, d2)
    }

    /// Exact integral of `p * x1^a * x2^b` over the rectangle.
    pub fn integrate_times_monomial(
        &self,
        bounds: (f64, f64, f64, f64),
        a: u32,
        b: u32,
    ) -> f64 {
        let (x0, x1, y0, y1) = bounds;
        let mono = |lo: f64, hi: f64, n: u32| -> f64 {
            let n1 = (n + 1) as f64;
            (hi.powi(n as i32 + 1) - lo.powi(n as i32 + 1)) / n1
        };
        self.coeffs
            .iter()
            .zip(BASIS.iter())
            .map(|(&c, &(i, j))| c * mono(x0, x1, i + a) * mono(y0, y1, j + b))
            .sum()
    }

    /// Exact integral over the rectangle.
    pub fn integrate(&self, bounds: (f64, f64, f64, f64)) -> f64 {
        self.integrate_times_monomial(bounds, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_and_grad() {
        // p = 2 + x1 - 3 x2^2 + x1^3
        let p = Poly2::new(vec![2.0, 1.0, 0.0, 0.0, 0.0, -3.0, 1.0]);
        assert_relative_eq!(p.eval(2.0, 1.0), 2.0 + 2.0 - 3.0 + 8.0);
        let (d1, d2) = p.grad(2.0, 1.0);
        assert_relative_eq!(d1, 1.0 + 12.0);
        assert_relative_eq!(d2, -6.0);
    }

    #[test]
    fn centered_square_moments() {
        let bounds = (-0.5, 0.5, -0.5, 0.5);
        let x1 = Poly2::new(vec![0.0, 1.0]);
        assert_relative_eq!(x1.integrate(bounds), 0.0);
        assert_relative_eq!(x1.integrate_times_monomial(bounds, 1, 0), 1.0 / 12.0);
        assert_relative_eq!(x1.integrate_times_monomial(bounds, 0, 1), 0.0);
        let x2sq = Poly2::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(x2sq.integrate(bounds), 1.0 / 12.0);
    }
}
