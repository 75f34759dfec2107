//! Uniform box discretization of `[-L, L]^N` with a zero exterior.
//!
//! Interior points are stored row-major with the last axis fastest. Forward
//! differences live on edges: along axis `d` there are `n + 1` edges per grid
//! line, edge `k` carrying `(u[k] - u[k-1]) / h` with `u[-1] = u[n] = 0`. With
//! this layout the adjoint of the difference operator is exactly the centered
//! `2N + 1` point negative Laplacian, so summation by parts holds to rounding.

use crate::energy::PotentialField;
use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points_per_dim: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points_per_dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension out of range: {dim} (expected 1, 2 or 3)"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        if points_per_dim < 3 {
            return Err(Error::InvalidGrid(format!(
                "too few points: {points_per_dim} per axis (need at least 3)"
            )));
        }
        let total = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(points_per_dim));
        let edges = total.and_then(|t| (t / points_per_dim).checked_mul(points_per_dim + 1));
        if total.is_none() || edges.is_none() {
            return Err(Error::InvalidGrid(format!(
                "{points_per_dim}^{dim} points exceed addressable memory"
            )));
        }
        Ok(Grid {
            dim,
            half_width,
            points_per_dim,
            spacing: 2.0 * half_width / (points_per_dim as f64 + 1.0),
        })
    }

    /// Default truncation half-width: 8 in one dimension, 6 otherwise.
    pub fn default_half_width(dim: usize) -> f64 {
        if dim == 1 {
            8.0
        } else {
            6.0
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of interior points, `n^N`.
    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^N` of a single point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinate of interior index `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 1.0) * self.spacing
    }

    /// Per-axis indices of a flat point index.
    pub fn multi_index(&self, flat: usize) -> [usize; MAX_DIM] {
        let n = self.points_per_dim;
        let mut idx = [0; MAX_DIM];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % n;
            rest /= n;
        }
        idx
    }

    /// Cartesian position of a flat point index (unused axes are zero).
    pub fn position(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Flat-index stride of an axis.
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_dim.pow((self.dim - 1 - axis) as u32)
    }

    /// Number of edges carrying the forward differences along one axis.
    pub fn edge_count(&self) -> usize {
        self.len() / self.points_per_dim * (self.points_per_dim + 1)
    }

    fn edge_stride(&self, component: usize, axis: usize) -> usize {
        let n = self.points_per_dim;
        ((axis + 1)..self.dim)
            .map(|a| if a == component { n + 1 } else { n })
            .product()
    }

    /// Calls `f(point_base, edge_base)` for every grid line along `axis`.
    /// Points on the line sit at `point_base + k * stride(axis)`, edges at
    /// `edge_base + k * edge_line_stride(axis)`.
    pub(crate) fn for_each_line(&self, axis: usize, mut f: impl FnMut(usize, usize)) {
        let n = self.points_per_dim;
        let others: Vec<usize> = (0..self.dim).filter(|&a| a != axis).collect();
        let lines = self.len() / n;
        let mut idx = [0usize; MAX_DIM];
        for line in 0..lines {
            let mut rest = line;
            for &a in others.iter().rev() {
                idx[a] = rest % n;
                rest /= n;
            }
            let mut pb = 0;
            let mut eb = 0;
            for &a in &others {
                pb += idx[a] * self.stride(a);
                eb += idx[a] * self.edge_stride(axis, a);
            }
            f(pb, eb);
        }
    }

    pub(crate) fn edge_line_stride(&self, axis: usize) -> usize {
        self.edge_stride(axis, axis)
    }

    /// Flat indices of the grid neighbours of a point (interior only).
    pub fn neighbors(&self, flat: usize) -> impl Iterator<Item = usize> + '_ {
        let idx = self.multi_index(flat);
        (0..self.dim).flat_map(move |axis| {
            let s = self.stride(axis);
            let lo = (idx[axis] > 0).then(|| flat - s);
            let hi = (idx[axis] + 1 < self.points_per_dim).then(|| flat + s);
            lo.into_iter().chain(hi)
        })
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{} vs {}",
                self.describe(),
                other.describe()
            )))
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "dim={} points={} half_width={}",
            self.dim, self.points_per_dim, self.half_width
        )
    }
}

/// Validated grid constructor.
pub fn make_grid(dim: usize, half_width: f64, points_per_dim: usize) -> Result<Grid> {
    Grid::new(dim, half_width, points_per_dim)
}

/// A real function sampled at the interior points of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for a grid with {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(x)` at every interior point; `x` has length `dim`.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|v| c * v).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Result<Field> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        ))
    }

    pub fn hadamard(&self, other: &Field) -> Result<Field> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        ))
    }
}

/// Forward differences, one edge array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Edge values along `axis`, row-major over the shape where that axis
    /// has `n + 1` entries.
    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// `sum_edges a . b * h^N`.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let s: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        Ok(s * self.grid.cell_volume())
    }
}

pub(crate) fn edge_differences(grid: &Grid, u: &[f64], axis: usize, out: &mut [f64]) {
    let n = grid.points_per_dim();
    let ps = grid.stride(axis);
    let es = grid.edge_line_stride(axis);
    let inv_h = 1.0 / grid.spacing();
    grid.for_each_line(axis, |pb, eb| {
        let mut prev = 0.0;
        for k in 0..n {
            let cur = u[pb + k * ps];
            out[eb + k * es] = (cur - prev) * inv_h;
            prev = cur;
        }
        out[eb + n * es] = -prev * inv_h;
    });
}

/// All forward-difference components of `u`.
pub(crate) fn gradient_edges(grid: &Grid, u: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.dim())
        .map(|axis| {
            let mut e = vec![0.0; grid.edge_count()];
            edge_differences(grid, u, axis, &mut e);
            e
        })
        .collect()
}

/// Adds the adjoint of the forward difference along `axis` applied to `flux`
/// into `out`: `out[k] += (flux[k] - flux[k+1]) / h`.
pub(crate) fn add_adjoint_difference(grid: &Grid, flux: &[f64], axis: usize, out: &mut [f64]) {
    let n = grid.points_per_dim();
    let ps = grid.stride(axis);
    let es = grid.edge_line_stride(axis);
    let inv_h = 1.0 / grid.spacing();
    grid.for_each_line(axis, |pb, eb| {
        for k in 0..n {
            out[pb + k * ps] += (flux[eb + k * es] - flux[eb + (k + 1) * es]) * inv_h;
        }
    });
}

/// Centered `2N + 1` point negative Laplacian with zero exterior values.
pub(crate) fn neg_laplacian(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let n = grid.points_per_dim();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    out.iter_mut().for_each(|o| *o = 0.0);
    for axis in 0..grid.dim() {
        let ps = grid.stride(axis);
        grid.for_each_line(axis, |pb, _| {
            for k in 0..n {
                let i = pb + k * ps;
                let left = if k > 0 { u[i - ps] } else { 0.0 };
                let right = if k + 1 < n { u[i + ps] } else { 0.0 };
                out[i] += (2.0 * u[i] - left - right) * inv_h2;
            }
        });
    }
}

pub(crate) fn sum_sq_edges(edges: &[Vec<f64>]) -> f64 {
    edges.iter().flatten().map(|g| g * g).sum()
}

pub(crate) fn check_field(grid: &Grid, u: &Field) -> Result<()> {
    grid.ensure_same(u.grid())
}

pub fn neg_laplacian_apply(grid: &Grid, u: &Field) -> Result<Field> {
    check_field(grid, u)?;
    let mut out = vec![0.0; grid.len()];
    neg_laplacian(grid, u.values(), &mut out);
    Ok(Field::from_raw(*grid, out))
}

pub fn forward_gradient(grid: &Grid, u: &Field) -> Result<VectorField> {
    check_field(grid, u)?;
    Ok(VectorField {
        grid: *grid,
        components: gradient_edges(grid, u.values()),
    })
}

/// `h^N * sum` over interior points.
pub fn integrate(grid: &Grid, w: &Field) -> Result<f64> {
    check_field(grid, w)?;
    Ok(w.values().iter().sum::<f64>() * grid.cell_volume())
}

pub(crate) fn h1v_sq(grid: &Grid, v: &[f64], u: &[f64]) -> f64 {
    let grad = sum_sq_edges(&gradient_edges(grid, u));
    let pot: f64 = v.iter().zip(u).map(|(v, u)| v * u * u).sum();
    (grad + pot) * grid.cell_volume()
}

/// `sqrt(int |grad u|^2 + int V u^2)`.
pub fn norm_h1v(grid: &Grid, v: &PotentialField, u: &Field) -> Result<f64> {
    check_field(grid, u)?;
    grid.ensure_same(v.grid())?;
    Ok(h1v_sq(grid, v.values(), u.values()).max(0.0).sqrt())
}

pub(crate) fn w1p_pow(grid: &Grid, u: &[f64], p: f64) -> f64 {
    let grad: f64 = gradient_edges(grid, u)
        .iter()
        .flatten()
        .map(|g| g.abs().powf(p))
        .sum();
    let mass: f64 = u.iter().map(|x| x.abs().powf(p)).sum();
    (grad + mass) * grid.cell_volume()
}

/// `(int |grad u|^p + int |u|^p)^(1/p)` for `p` in `(1, 2)`. The gradient
/// term sums `|d_k u|^p` over every edge of every axis.
pub fn norm_w1p(grid: &Grid, u: &Field, p: f64) -> Result<f64> {
    check_field(grid, u)?;
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidParams(format!(
            "p = {p} outside the open interval (1, 2)"
        )));
    }
    Ok(w1p_pow(grid, u.values(), p).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn make_grid_spacing_and_coordinates() {
        let g = make_grid(1, 1.0, 3).unwrap();
        assert_eq!(g.spacing(), 0.5);
        let xs: Vec<f64> = (0..3).map(|i| g.coordinate(i)).collect();
        assert_eq!(xs, vec![-0.5, 0.0, 0.5]);

        let g2 = make_grid(2, 4.0, 7).unwrap();
        assert_eq!(g2.spacing(), 1.0);
        assert_eq!(g2.len(), 49);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        let err = make_grid(4, 1.0, 3).unwrap_err().to_string();
        assert!(err.contains("dimension out of range"), "{err}");
        assert!(make_grid(0, 1.0, 3).is_err());
        assert!(make_grid(1, 0.0, 3).is_err());
        assert!(make_grid(1, -1.0, 3).is_err());
        assert!(make_grid(1, 1.0, 2).is_err());
        assert!(make_grid(3, 1.0, usize::MAX / 2).is_err());
    }

    #[test]
    fn coordinates_stay_inside_box() {
        let g = make_grid(3, 2.5, 9).unwrap();
        for i in 0..g.len() {
            for x in &g.position(i)[..3] {
                assert!(x.abs() < 2.5);
            }
        }
    }

    #[test]
    fn laplacian_1d_spike() {
        let g = make_grid(1, 2.0, 3).unwrap(); // h = 1
        let u = Field::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        let lu = neg_laplacian_apply(&g, &u).unwrap();
        assert_eq!(lu.values(), &[-1.0, 2.0, -1.0]);
    }

    #[test]
    fn laplacian_2d_center_indicator() {
        let g = make_grid(2, 2.0, 3).unwrap(); // h = 1
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let lu = neg_laplacian_apply(&g, &Field::new(g, vals).unwrap()).unwrap();
        assert_eq!(lu.values()[4], 4.0);
        for i in [1, 3, 5, 7] {
            assert_eq!(lu.values()[i], -1.0);
        }
        for i in [0, 2, 6, 8] {
            assert_eq!(lu.values()[i], 0.0);
        }
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = make_grid(3, 1.0, 4).unwrap();
        let lu = neg_laplacian_apply(&g, &Field::zeros(g)).unwrap();
        assert!(lu.is_zero());
    }

    #[test]
    fn forward_gradient_1d_hand_enumeration() {
        let g = make_grid(1, 1.0, 3).unwrap(); // h = 0.5
        let u = Field::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        let du = forward_gradient(&g, &u).unwrap();
        // leading boundary edge, then the forward edge of each interior point
        assert_eq!(du.component(0), &[0.0, 2.0, -2.0, 0.0]);
    }

    #[test]
    fn forward_gradient_affine_interior_slope() {
        let g = make_grid(2, 3.0, 5).unwrap();
        let u = Field::from_fn(g, |x| 0.7 * x[1] - 0.2).unwrap();
        let du = forward_gradient(&g, &u).unwrap();
        let n = g.points_per_dim();
        // along axis 1 the interior edges k = 1..n-1 of each line carry the slope
        for line in 0..n {
            for k in 1..n {
                assert_relative_eq!(du.component(1)[line * (n + 1) + k], 0.7, epsilon = 1e-12);
            }
        }
        // axis 0 differences vanish between interior points
        for k in 1..n {
            for j in 0..n {
                assert_relative_eq!(du.component(0)[k * n + j], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let g = make_grid(1, 1.0, 3).unwrap();
        assert_eq!(
            integrate(&g, &Field::new(g, vec![1.0; 3]).unwrap()).unwrap(),
            1.5
        );
        assert_eq!(integrate(&g, &Field::zeros(g)).unwrap(), 0.0);
        let g2 = make_grid(2, 2.0, 3).unwrap();
        let mut vals = vec![0.0; 9];
        vals[7] = 1.0;
        assert_eq!(integrate(&g2, &Field::new(g2, vals).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_grids_error() {
        let g = make_grid(1, 1.0, 3).unwrap();
        let h = make_grid(1, 1.0, 5).unwrap();
        assert!(matches!(
            integrate(&g, &Field::zeros(h)),
            Err(Error::GridMismatch(_))
        ));
        assert!(neg_laplacian_apply(&g, &Field::zeros(h)).is_err());
    }

    #[test]
    fn field_rejects_nan_and_wrong_length() {
        let g = make_grid(1, 1.0, 3).unwrap();
        assert!(Field::new(g, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(Field::new(g, vec![0.0; 4]).is_err());
    }

    #[test]
    fn norm_w1p_rejects_p_two() {
        let g = make_grid(1, 1.0, 3).unwrap();
        let err = norm_w1p(&g, &Field::zeros(g), 2.0).unwrap_err();
        assert!(err.to_string().contains("(1, 2)"));
        assert_eq!(norm_w1p(&g, &Field::zeros(g), 1.5).unwrap(), 0.0);
    }

    #[test]
    fn neighbors_in_2d() {
        let g = make_grid(2, 1.0, 3).unwrap();
        let mut nb: Vec<usize> = g.neighbors(4).collect();
        nb.sort();
        assert_eq!(nb, vec![1, 3, 5, 7]);
        let mut corner: Vec<usize> = g.neighbors(0).collect();
        corner.sort();
        assert_eq!(corner, vec![1, 3]);
    }
}
