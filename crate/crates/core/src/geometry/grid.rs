//! Rectangular mid-plane grids, sampled fields, finite-difference calculus,
//! and trapezoid quadrature.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{PlateError, Result};

/// Axis of the mid-plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

/// Discrete rectangular mid-plane `S = (x0, x1) x (y0, y1)` with an optional
/// interior mask restricting the integration domain.
#[derive(Debug, Clone)]
pub struct MidplaneGrid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub n1: usize,
    pub n2: usize,
    mask: Option<Vec<bool>>,
}

impl MidplaneGrid {
    pub fn new(bounds: (f64, f64, f64, f64), nodes: (usize, usize)) -> Result<Arc<Self>> {
        let (x0, x1, y0, y1) = bounds;
        let (n1, n2) = nodes;
        if !(x0 < x1 && y0 < y1) {
            return Err(PlateError::InvalidGrid(format!(
                "bounds must be increasing, got ({x0}, {x1}) x ({y0}, {y1})"
            )));
        }
        if n1 < 5 || n2 < 5 {
            return Err(PlateError::InvalidGrid(format!(
                "at least 5 nodes per axis are required, got {n1} x {n2}"
            )));
        }
        Ok(Arc::new(MidplaneGrid {
            x0,
            x1,
            y0,
            y1,
            n1,
            n2,
            mask: None,
        }))
    }

    /// Unit square centered at the origin.
    pub fn unit_square(n: usize) -> Arc<Self> {
        Self::new((-0.5, 0.5, -0.5, 0.5), (n, n)).expect("valid grid")
    }

    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Arc<Self>> {
        if mask.len() != self.node_count() {
            return Err(PlateError::InvalidGrid("mask length mismatch".into()));
        }
        Ok(Arc::new(MidplaneGrid {
            mask: Some(mask),
            ..self.clone()
        }))
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.x1 - self.x0) / (self.n1 - 1) as f64,
            (self.y1 - self.y0) / (self.n2 - 1) as f64,
        )
    }

    pub fn node_count(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n1 + ix
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (sx, sy) = self.spacing();
        let ix = node % self.n1;
        let iy = node / self.n1;
        (self.x0 + ix as f64 * sx, self.y0 + iy as f64 * sy)
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[node])
    }

    /// True for nodes whose full 5-point stencil footprint avoids the boundary.
    pub fn is_interior(&self, node: usize) -> bool {
        let ix = node % self.n1;
        let iy = node / self.n1;
        ix >= 2 && ix + 2 < self.n1 && iy >= 2 && iy + 2 < self.n2
    }

    /// Trapezoid quadrature weight of a node (zero when masked out).
    pub fn weight(&self, node: usize) -> f64 {
        if !self.is_active(node) {
            return 0.0;
        }
        let (sx, sy) = self.spacing();
        let ix = node % self.n1;
        let iy = node / self.n1;
        let wx = if ix == 0 || ix == self.n1 - 1 { 0.5 } else { 1.0 };
        let wy = if iy == 0 || iy == self.n2 - 1 { 0.5 } else { 1.0 };
        wx * wy * sx * sy
    }

    /// Area of the (masked) integration domain, by the same weights.
    pub fn area(&self) -> f64 {
        (0..self.node_count()).map(|n| self.weight(n)).sum()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.n1 == other.n1
            && self.n2 == other.n2
            && (self.x0 - other.x0).abs() < 1e-14
            && (self.x1 - other.x1).abs() < 1e-14
            && (self.y0 - other.y0).abs() < 1e-14
            && (self.y1 - other.y1).abs() < 1e-14
    }
}

/// Rank of a sampled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRank {
    Scalar,
    Vector2,
    Vector3,
    /// Generic component block (matrices stored row-major).
    Matrix(usize),
}

impl FieldRank {
    pub fn components(&self) -> usize {
        match self {
            FieldRank::Scalar => 1,
            FieldRank::Vector2 => 2,
            FieldRank::Vector3 => 3,
            FieldRank::Matrix(c) => *c,
        }
    }
}

/// Values sampled at every grid node; `comps` values per node, node-major.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<MidplaneGrid>,
    rank: FieldRank,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<MidplaneGrid>, rank: FieldRank) -> Self {
        let data = vec![0.0; grid.node_count() * rank.components()];
        Field { grid, rank, data }
    }

    /// Samples `f(x1, x2)` into a field; the callback fills the per-node block.
    pub fn from_fn<F: FnMut(f64, f64, &mut [f64])>(
        grid: Arc<MidplaneGrid>,
        rank: FieldRank,
        mut f: F,
    ) -> Self {
        let comps = rank.components();
        let mut data = vec![0.0; grid.node_count() * comps];
        for node in 0..grid.node_count() {
            let (x, y) = grid.coords(node);
            f(x, y, &mut data[node * comps..(node + 1) * comps]);
        }
        Field { grid, rank, data }
    }

    pub fn scalar_from_fn<F: FnMut(f64, f64) -> f64>(grid: Arc<MidplaneGrid>, mut f: F) -> Self {
        Field::from_fn(grid, FieldRank::Scalar, |x, y, out| out[0] = f(x, y))
    }

    pub fn grid(&self) -> &Arc<MidplaneGrid> {
        &self.grid
    }

    pub fn rank(&self) -> FieldRank {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.rank.components()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn at(&self, node: usize, comp: usize) -> f64 {
        self.data[node * self.components() + comp]
    }

    pub fn set(&mut self, node: usize, comp: usize, value: f64) {
        let c = self.components();
        self.data[node * c + comp] = value;
    }

    pub fn block(&self, node: usize) -> &[f64] {
        let c = self.components();
        &self.data[node * c..(node + 1) * c]
    }

    pub fn block_mut(&mut self, node: usize) -> &mut [f64] {
        let c = self.components();
        &mut self.data[node * c..(node + 1) * c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.grid.same_shape(&other.grid)
    }

    /// Max over nodes of the Euclidean norm of the component block.
    pub fn max_block_norm(&self) -> f64 {
        let c = self.components();
        (0..self.node_count())
            .map(|n| {
                self.data[n * c..(n + 1) * c]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Weighted L2 norm over the integration domain.
    pub fn l2_norm(&self) -> f64 {
        let c = self.components();
        let mut acc = 0.0;
        for n in 0..self.node_count() {
            let w = self.grid.weight(n);
            acc += w * self.data[n * c..(n + 1) * c].iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Trapezoid integral of a scalar field.
    pub fn integrate(&self) -> f64 {
        assert_eq!(self.components(), 1, "integrate expects a scalar field");
        (0..self.node_count())
            .map(|n| self.grid.weight(n) * self.data[n])
            .sum()
    }

    /// Subtracts the weighted mean from every component.
    pub fn remove_mean(&mut self) {
        let c = self.components();
        let area = self.grid.area();
        for comp in 0..c {
            let mean: f64 = (0..self.node_count())
                .map(|n| self.grid.weight(n) * self.data[n * c + comp])
                .sum::<f64>()
                / area;
            for n in 0..self.node_count() {
                self.data[n * c + comp] -= mean;
            }
        }
    }

    /// Writes `x1,x2,c0,c1,...` rows with full precision.
    pub fn to_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let c = self.components();
        write!(out, "x1,x2")?;
        for k in 0..c {
            write!(out, ",c{k}")?;
        }
        writeln!(out)?;
        for node in 0..self.node_count() {
            let (x, y) = self.grid.coords(node);
            write!(out, "{x:.17e},{y:.17e}")?;
            for k in 0..c {
                write!(out, ",{:.17e}", self.at(node, k))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads a field written by [`Field::to_csv`] back onto `grid`.
    pub fn from_csv<R: BufRead>(grid: Arc<MidplaneGrid>, reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| PlateError::InvalidField("empty CSV".into()))?
            .map_err(|e| PlateError::InvalidField(e.to_string()))?;
        let comps = header.split(',').count().saturating_sub(2);
        if comps == 0 {
            return Err(PlateError::InvalidField("CSV has no component columns".into()));
        }
        let rank = match comps {
            1 => FieldRank::Scalar,
            2 => FieldRank::Vector2,
            3 => FieldRank::Vector3,
            c => FieldRank::Matrix(c),
        };
        let mut field = Field::zeros(grid, rank);
        let mut node = 0;
        for line in lines {
            let line = line.map_err(|e| PlateError::InvalidField(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let _x = parts.next();
            let _y = parts.next();
            for k in 0..comps {
                let v: f64 = parts
                    .next()
                    .ok_or_else(|| PlateError::InvalidField(format!("row {node} too short")))?
                    .trim()
                    .parse()
                    .map_err(|e| PlateError::InvalidField(format!("row {node}: {e}")))?;
                field.set(node, k, v);
            }
            node += 1;
        }
        if node != field.node_count() {
            return Err(PlateError::InvalidField(format!(
                "expected {} rows, got {node}",
                field.node_count()
            )));
        }
        Ok(field)
    }
}

/// One row of the 1-D differentiation stencil: index offsets and weights,
/// already divided by the spacing.
///
/// Fourth-order five-point rows: central in the interior, biased one-sided at
/// the two nodes nearest each boundary.
pub fn stencil_row(n: usize, i: usize, spacing: f64) -> ([usize; 5], [f64; 5]) {
    debug_assert!(n >= 5);
    let h12 = 12.0 * spacing;
    if i == 0 {
        ([0, 1, 2, 3, 4], [-25.0, 48.0, -36.0, 16.0, -3.0].map(|c| c / h12))
    } else if i == 1 {
        ([0, 1, 2, 3, 4], [-3.0, -10.0, 18.0, -6.0, 1.0].map(|c| c / h12))
    } else if i + 2 < n {
        (
            [i - 2, i - 1, i, i + 1, i + 2],
            [1.0, -8.0, 0.0, 8.0, -1.0].map(|c| c / h12),
        )
    } else if i + 2 == n {
        (
            [n - 5, n - 4, n - 3, n - 2, n - 1],
            [-1.0, 6.0, -18.0, 10.0, 3.0].map(|c| c / h12),
        )
    } else {
        (
            [n - 5, n - 4, n - 3, n - 2, n - 1],
            [3.0, -16.0, 36.0, -48.0, 25.0].map(|c| c / h12),
        )
    }
}

/// Partial derivative along `axis`, all components at once.
pub fn derivative(field: &Field, axis: Axis) -> Field {
    let grid = field.grid().clone();
    let comps = field.components();
    let (sx, sy) = grid.spacing();
    let mut out = Field::zeros(grid.clone(), field.rank());
    match axis {
        Axis::X1 => {
            for iy in 0..grid.n2 {
                for ix in 0..grid.n1 {
                    let (idx, w) = stencil_row(grid.n1, ix, sx);
                    let node = grid.index(ix, iy);
                    for c in 0..comps {
                        let mut acc = 0.0;
                        for k in 0..5 {
                            acc += w[k] * field.at(grid.index(idx[k], iy), c);
                        }
                        out.set(node, c, acc);
                    }
                }
            }
        }
        Axis::X2 => {
            for iy in 0..grid.n2 {
                let (idx, w) = stencil_row(grid.n2, iy, sy);
                for ix in 0..grid.n1 {
                    let node = grid.index(ix, iy);
                    for c in 0..comps {
                        let mut acc = 0.0;
                        for k in 0..5 {
                            acc += w[k] * field.at(grid.index(ix, idx[k]), c);
                        }
                        out.set(node, c, acc);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`derivative`]: accumulates `sum_n cof(n) d/d field` into a new
/// field, i.e. applies the transposed stencil matrix.
pub fn derivative_adjoint(cofield: &Field, axis: Axis) -> Field {
    let grid = cofield.grid().clone();
    let comps = cofield.components();
    let (sx, sy) = grid.spacing();
    let mut out = Field::zeros(grid.clone(), cofield.rank());
    match axis {
        Axis::X1 => {
            for iy in 0..grid.n2 {
                for ix in 0..grid.n1 {
                    let (idx, w) = stencil_row(grid.n1, ix, sx);
                    let node = grid.index(ix, iy);
                    for c in 0..comps {
                        let v = cofield.at(node, c);
                        if v != 0.0 {
                            for k in 0..5 {
                                let target = grid.index(idx[k], iy);
                                let cur = out.at(target, c);
                                out.set(target, c, cur + w[k] * v);
                            }
                        }
                    }
                }
            }
        }
        Axis::X2 => {
            for iy in 0..grid.n2 {
                let (idx, w) = stencil_row(grid.n2, iy, sy);
                for ix in 0..grid.n1 {
                    let node = grid.index(ix, iy);
                    for c in 0..comps {
                        let v = cofield.at(node, c);
                        if v != 0.0 {
                            for k in 0..5 {
                                let target = grid.index(ix, idx[k]);
                                let cur = out.at(target, c);
                                out.set(target, c, cur + w[k] * v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of a scalar field as a Vector2 field.
pub fn gradient_scalar(field: &Field) -> Field {
    assert_eq!(field.components(), 1);
    let d1 = derivative(field, Axis::X1);
    let d2 = derivative(field, Axis::X2);
    let mut out = Field::zeros(field.grid().clone(), FieldRank::Vector2);
    for n in 0..field.node_count() {
        out.set(n, 0, d1.at(n, 0));
        out.set(n, 1, d2.at(n, 0));
    }
    out
}

/// Hessian of a scalar field as a 2x2 matrix field (row-major), computed by
/// repeated first differences and symmetrized.
pub fn hessian_scalar(field: &Field) -> Field {
    let d1 = derivative(field, Axis::X1);
    let d2 = derivative(field, Axis::X2);
    let d11 = derivative(&d1, Axis::X1);
    let d12 = derivative(&d1, Axis::X2);
    let d21 = derivative(&d2, Axis::X1);
    let d22 = derivative(&d2, Axis::X2);
    let mut out = Field::zeros(field.grid().clone(), FieldRank::Matrix(4));
    for n in 0..field.node_count() {
        let off = 0.5 * (d12.at(n, 0) + d21.at(n, 0));
        out.set(n, 0, d11.at(n, 0));
        out.set(n, 1, off);
        out.set(n, 2, off);
        out.set(n, 3, d22.at(n, 0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_area() {
        let grid = MidplaneGrid::new((-0.5, 0.5, -1.0, 1.0), (11, 21)).unwrap();
        assert_relative_eq!(grid.area(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn grid_rejects_tiny_axes() {
        assert!(MidplaneGrid::new((0.0, 1.0, 0.0, 1.0), (4, 10)).is_err());
        assert!(MidplaneGrid::new((1.0, 0.0, 0.0, 1.0), (10, 10)).is_err());
    }

    #[test]
    fn derivative_exact_for_cubics() {
        let grid = MidplaneGrid::unit_square(9);
        let f = Field::scalar_from_fn(grid.clone(), |x, y| x * x * x - 2.0 * y * y * y + x * y);
        let d1 = derivative(&f, Axis::X1);
        let d2 = derivative(&f, Axis::X2);
        for n in 0..f.node_count() {
            let (x, y) = grid.coords(n);
            assert_relative_eq!(d1.at(n, 0), 3.0 * x * x + y, epsilon = 1e-12);
            assert_relative_eq!(d2.at(n, 0), -6.0 * y * y + x, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_fourth_order_on_smooth_data() {
        let mut errs = Vec::new();
        for n in [17, 33] {
            let grid = MidplaneGrid::unit_square(n);
            let f = Field::scalar_from_fn(grid.clone(), |x, _| (3.0 * x).sin());
            let d = derivative(&f, Axis::X1);
            let mut err = 0.0f64;
            for node in 0..f.node_count() {
                let (x, _) = grid.coords(node);
                err = err.max((d.at(node, 0) - 3.0 * (3.0 * x).cos()).abs());
            }
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn adjoint_matches_transpose() {
        let grid = MidplaneGrid::new((0.0, 1.0, 0.0, 1.0), (6, 7)).unwrap();
        let mut a = Field::zeros(grid.clone(), FieldRank::Scalar);
        let mut b = Field::zeros(grid.clone(), FieldRank::Scalar);
        for n in 0..a.node_count() {
            a.set(n, 0, (n as f64 * 0.37).sin());
            b.set(n, 0, (n as f64 * 0.61).cos());
        }
        for axis in [Axis::X1, Axis::X2] {
            let da = derivative(&a, axis);
            let atb = derivative_adjoint(&b, axis);
            let lhs: f64 = (0..a.node_count()).map(|n| da.at(n, 0) * b.at(n, 0)).sum();
            let rhs: f64 = (0..a.node_count()).map(|n| a.at(n, 0) * atb.at(n, 0)).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_exact_for_quadratics() {
        let grid = MidplaneGrid::unit_square(7);
        let f = Field::scalar_from_fn(grid.clone(), |x, y| x * x + 3.0 * x * y - y * y);
        let h = hessian_scalar(&f);
        for n in 0..f.node_count() {
            assert_relative_eq!(h.at(n, 0), 2.0, epsilon = 1e-11);
            assert_relative_eq!(h.at(n, 1), 3.0, epsilon = 1e-11);
            assert_relative_eq!(h.at(n, 3), -2.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn trapezoid_second_order() {
        // integral of cos(pi x) (1 + y) over the centered unit square is 2/pi.
        let exact = 2.0 / std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [21, 41] {
            let grid = MidplaneGrid::unit_square(n);
            let f =
                Field::scalar_from_fn(grid, |x, y| (x * std::f64::consts::PI).cos() * (1.0 + y));
            errs.push((f.integrate() - exact).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "observed order {order}");
    }

    #[test]
    fn csv_round_trip() {
        let grid = MidplaneGrid::new((0.0, 2.0, -1.0, 1.0), (5, 6)).unwrap();
        let f = Field::from_fn(grid.clone(), FieldRank::Vector3, |x, y, out| {
            out[0] = x;
            out[1] = y * y;
            out[2] = x * y + 0.12345678901234567;
        });
        let mut buf = Vec::new();
        f.to_csv(&mut buf).unwrap();
        let back = Field::from_csv(grid, std::io::Cursor::new(buf)).unwrap();
        for n in 0..f.node_count() {
            for c in 0..3 {
                assert_eq!(f.at(n, c), back.at(n, c));
            }
        }
    }

    #[test]
    fn mask_restricts_integration() {
        let grid = MidplaneGrid::unit_square(11);
        let mask: Vec<bool> = (0..grid.node_count())
            .map(|n| {
                let (x, y) = grid.coords(n);
                x < 0.0 || y < 0.0 || x * x + y * y > 1e-12
            })
            .collect();
        let masked = grid.with_mask(mask).unwrap();
        let f = Field::scalar_from_fn(masked.clone(), |_, _| 1.0);
        assert!(f.integrate() < 1.0);
    }

    #[test]
    fn remove_mean_zeroes_the_average() {
        let grid = MidplaneGrid::unit_square(9);
        let mut f = Field::scalar_from_fn(grid.clone(), |x, y| 1.0 + x + y * y);
        f.remove_mean();
        let mean: f64 = (0..f.node_count()).map(|n| grid.weight(n) * f.at(n, 0)).sum();
        assert!(mean.abs() < 1e-14);
    }
}
