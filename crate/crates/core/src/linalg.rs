//! Matrix-free weighted diffusion operators `D^T diag(a) D + diag(c)` and
//! their solvers.

use crate::energy::{PerturbationParams, PotentialField};
use crate::grid::{add_adjoint_difference, edge_differences, gradient_edges, Grid};

/// Relative residual target for solves with the residual metric.
pub const SOLVE_RTOL: f64 = 1e-10;

/// Relative residual target for search directions. Every conjugate-gradient
/// iterate started from zero is a descent direction, so these need not be
/// exact.
pub const SEARCH_RTOL: f64 = 1e-6;

/// Upper bound on the reweighting factors of the search operator. The
/// regularization already bounds them by `eps^(p-2)`; the cap only guards
/// the linear solves for `p` close to 1.
pub const WEIGHT_CAP: f64 = 1e8;

#[derive(Debug, Clone)]
pub(crate) struct WeightedOperator<'a> {
    grid: &'a Grid,
    /// One weight per edge and axis; `None` means unit weights.
    edge_weights: Option<Vec<Vec<f64>>>,
    diag: Vec<f64>,
}

impl<'a> WeightedOperator<'a> {
    /// `-Delta_h + V + 1`, the Riesz map of the `H^1_V`-type inner product.
    pub fn residual_metric(grid: &'a Grid, v: &PotentialField) -> Self {
        WeightedOperator {
            grid,
            edge_weights: None,
            diag: v.values().iter().map(|x| x + 1.0).collect(),
        }
    }

    /// `-Delta_h + V + 1` plus `lambda` times the reweighted p-Laplacian and
    /// `|u|^(p-2)` mass terms frozen at `u`. Reduces to `residual_metric`
    /// when `lambda = 0`.
    pub fn search_metric(
        grid: &'a Grid,
        v: &PotentialField,
        u: &[f64],
        params: &PerturbationParams,
    ) -> Self {
        let lam = params.lambda();
        let expo = 0.5 * (params.p() - 2.0);
        let eps2 = params.grad_reg_eps().powi(2);
        let weight = |t: f64| (t * t + eps2).powf(expo).min(WEIGHT_CAP);
        let diag = v
            .values()
            .iter()
            .zip(u)
            .map(|(vi, &x)| {
                let mut d = vi + 1.0;
                if lam > 0.0 {
                    d += lam * weight(x);
                }
                d
            })
            .collect();
        let edge_weights = (lam > 0.0).then(|| {
            gradient_edges(grid, u)
                .into_iter()
                .map(|edges| edges.into_iter().map(|g| 1.0 + lam * weight(g)).collect())
                .collect()
        });
        WeightedOperator {
            grid,
            edge_weights,
            diag,
        }
    }

    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for ((o, d), x) in out.iter_mut().zip(&self.diag).zip(z) {
            *o = d * x;
        }
        let mut flux = vec![0.0; self.grid.edge_count()];
        for axis in 0..self.grid.dim() {
            edge_differences(self.grid, z, axis, &mut flux);
            if let Some(w) = &self.edge_weights {
                for (f, a) in flux.iter_mut().zip(&w[axis]) {
                    *f *= a;
                }
            }
            add_adjoint_difference(self.grid, &flux, axis, out);
        }
    }

    fn edge_weight(&self, axis: usize, e: usize) -> f64 {
        self.edge_weights.as_ref().map_or(1.0, |w| w[axis][e])
    }

    fn diagonal(&self) -> Vec<f64> {
        let n = self.grid.points_per_dim();
        let inv_h2 = 1.0 / self.grid.spacing().powi(2);
        let mut d = self.diag.clone();
        for axis in 0..self.grid.dim() {
            let ps = self.grid.stride(axis);
            let es = self.grid.edge_line_stride(axis);
            self.grid.for_each_line(axis, |pb, eb| {
                for k in 0..n {
                    d[pb + k * ps] += (self.edge_weight(axis, eb + k * es)
                        + self.edge_weight(axis, eb + (k + 1) * es))
                        * inv_h2;
                }
            });
        }
        d
    }

    /// Solves `A z = b`. One-dimensional systems are tridiagonal and solved
    /// directly; otherwise Jacobi-preconditioned conjugate gradients to
    /// relative residual `rtol`.
    pub fn solve(&self, b: &[f64], rtol: f64) -> Vec<f64> {
        if self.grid.dim() == 1 {
            self.solve_tridiagonal(b)
        } else {
            self.solve_cg(b, rtol)
        }
    }

    fn solve_tridiagonal(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let inv_h2 = 1.0 / self.grid.spacing().powi(2);
        let main = self.diagonal();
        // off[i] couples i and i + 1 through edge i + 1
        let off: Vec<f64> = (0..n.saturating_sub(1))
            .map(|i| -self.edge_weight(0, i + 1) * inv_h2)
            .collect();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = main[0];
        c[0] = if n > 1 { off[0] / denom } else { 0.0 };
        d[0] = b[0] / denom;
        for i in 1..n {
            denom = main[i] - off[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = off[i] / denom;
            }
            d[i] = (b[i] - off[i - 1] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }

    pub fn solve_cg(&self, b: &[f64], rtol: f64) -> Vec<f64> {
        let n = b.len();
        let inv_diag: Vec<f64> = self.diagonal().iter().map(|d| 1.0 / d).collect();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return x;
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * n + 100;
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if dot(&r, &r).sqrt() <= rtol * bnorm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        x
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
