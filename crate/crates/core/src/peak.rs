//! Peak projection: rescales an iterate to the maximum of the energy along
//! its ray, or, for nodal searches, rescales each of its largest
//! sign-definite pieces to the maximum along that piece's own ray.
//!
//! For a piece `P` with the rest of the field `R` held fixed, edge values
//! are `g(t) = a t + c` with `a = DP`, `c = DR`, and
//!
//! ```text
//! (1/t) d/dt I(R + tP) = sum_e h^N (1 + lambda w_p(g)) g a / t + lambda t^(p-2) A
//!                        + B - C - M - 2 M log t
//! ```
//!
//! with `A = int |P|^p`, `B = int (V+1) P^2`, `C = int P^2 log P^2` and
//! `M = int P^2`. Neighbouring pieces have opposite signs, so `a c >= 0` on
//! every edge and the right-hand side is strictly decreasing in `t`: the
//! peak is the unique root.

use crate::energy::{log_density, Functional};
use crate::error::{Error, Result};
use crate::grid::{gradient_edges, Grid};

const MAX_LOG_SCALE: f64 = 300.0;
const LOG_SCALE_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Projector<'a> {
    func: Functional<'a>,
    pieces: usize,
}

impl<'a> Projector<'a> {
    /// `pieces = 1` projects along the ray of the whole field.
    pub fn new(func: Functional<'a>, pieces: usize) -> Self {
        Projector {
            func,
            pieces: pieces.max(1),
        }
    }

    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if self.pieces == 1 {
            let s = self.equation(u, None).solve()?;
            let t = s.exp();
            return Ok(u.iter().map(|x| x * t).collect());
        }
        let kept = largest_components(self.func.grid, u, self.pieces);
        if kept.is_empty() {
            return Err(Error::Collapse("no nonzero entries to project".into()));
        }
        let mut w = u.to_vec();
        for _ in 0..MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for piece in &kept {
                let s = self.equation(&w, Some(piece)).solve()?;
                let t = s.exp();
                for &i in piece {
                    w[i] *= t;
                }
                change = change.max(s.abs());
            }
            if change < 1e-12 {
                break;
            }
        }
        Ok(w)
    }

    /// Scale equation for a piece of `w`, or for all of `w` when `piece` is
    /// `None`.
    fn equation(&self, w: &[f64], piece: Option<&[usize]>) -> ScaleEquation {
        let grid = self.func.grid;
        let hn = grid.cell_volume();
        let params = &self.func.params;
        let p = params.p();
        let mut eq = ScaleEquation {
            lambda: params.lambda(),
            p,
            eps2: params.grad_reg_eps().powi(2),
            hn,
            edges: Vec::new(),
            ..Default::default()
        };
        let mut add_node = |x: f64, v: f64| {
            let x2 = x * x;
            eq.mass_p += x.abs().powf(p) * hn;
            eq.quad += (v + 1.0) * x2 * hn;
            eq.log_mass += log_density(x) * hn;
            eq.mass += x2 * hn;
        };
        match piece {
            None => {
                for (&x, &v) in w.iter().zip(self.func.v) {
                    add_node(x, v);
                }
                eq.edges = gradient_edges(grid, w)
                    .into_iter()
                    .flatten()
                    .filter(|&a| a != 0.0)
                    .map(|a| (a, 0.0))
                    .collect();
                eq.whole = true;
            }
            Some(nodes) => {
                let mut pf = vec![0.0; w.len()];
                for &i in nodes {
                    pf[i] = w[i];
                    add_node(w[i], self.func.v[i]);
                }
                let ga = gradient_edges(grid, &pf);
                let gw = gradient_edges(grid, w);
                for (ea, ew) in ga.iter().zip(&gw) {
                    for (&a, &g) in ea.iter().zip(ew) {
                        if a != 0.0 {
                            eq.edges.push((a, g - a));
                        }
                    }
                }
            }
        }
        eq
    }
}

#[derive(Debug, Default)]
struct ScaleEquation {
    lambda: f64,
    p: f64,
    eps2: f64,
    hn: f64,
    /// `(a, c)` for every edge the piece touches.
    edges: Vec<(f64, f64)>,
    whole: bool,
    mass_p: f64,
    quad: f64,
    log_mass: f64,
    mass: f64,
}

impl ScaleEquation {
    fn value(&self, s: f64) -> f64 {
        let t = s.exp();
        let expo = 0.5 * (self.p - 2.0);
        let mut edge_sum = 0.0;
        for &(a, c) in &self.edges {
            let g = a * t + c;
            let weight = if self.lambda > 0.0 {
                1.0 + self.lambda * (g * g + self.eps2).powf(expo)
            } else {
                1.0
            };
            edge_sum += weight * g * a / t;
        }
        let mut h =
            edge_sum * self.hn + self.quad - self.log_mass - self.mass - 2.0 * self.mass * s;
        if self.lambda > 0.0 {
            h += self.lambda * (s * (self.p - 2.0)).exp() * self.mass_p;
        }
        h
    }

    /// Log of the maximizing scale.
    fn solve(&self) -> Result<f64> {
        if !(self.mass > 0.0) {
            return Err(Error::Collapse("piece has zero mass".into()));
        }
        if self.lambda == 0.0 && self.whole {
            let dirichlet: f64 = self.edges.iter().map(|(a, _)| a * a).sum::<f64>() * self.hn;
            let s = (dirichlet + self.quad - self.log_mass - self.mass) / (2.0 * self.mass);
            return check_scale(s);
        }
        // keep h(lo) > 0 >= h(hi)
        let (mut lo, mut hi) = if self.value(0.0) > 0.0 {
            let (mut lo, mut hi) = (0.0, 1.0);
            while self.value(hi) > 0.0 {
                lo = hi;
                hi = check_scale(2.0 * hi)?;
            }
            (lo, hi)
        } else {
            let (mut lo, mut hi) = (-1.0, 0.0);
            while self.value(lo) <= 0.0 {
                hi = lo;
                lo = check_scale(2.0 * lo)?;
            }
            (lo, hi)
        };
        // Illinois variant of regula falsi on the bracket
        let (mut f_lo, mut f_hi) = (self.value(lo), self.value(hi));
        let mut side = 0i8;
        for _ in 0..200 {
            if hi - lo <= LOG_SCALE_TOL * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            let mut mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            let f_mid = self.value(mid);
            if f_mid > 0.0 {
                lo = mid;
                f_lo = f_mid;
                if side == 1 {
                    f_hi *= 0.5;
                }
                side = 1;
            } else if f_mid < 0.0 {
                hi = mid;
                f_hi = f_mid;
                if side == -1 {
                    f_lo *= 0.5;
                }
                side = -1;
            } else {
                return Ok(mid);
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_scale(s: f64) -> Result<f64> {
    if s.is_finite() && s.abs() <= MAX_LOG_SCALE {
        Ok(s)
    } else {
        Err(Error::Collapse(format!(
            "peak scale exp({s:.3e}) out of range"
        )))
    }
}

/// Sign-definite connected components of `u`, largest mass first (ties by
/// first index), truncated to `count`.
pub(crate) fn largest_components(grid: &Grid, u: &[f64], count: usize) -> Vec<Vec<usize>> {
    let mut comps = sign_components(grid, u);
    let mass = |c: &Vec<usize>| c.iter().map(|&i| u[i] * u[i]).sum::<f64>();
    comps.sort_by(|a, b| mass(b).total_cmp(&mass(a)).then(a[0].cmp(&b[0])));
    comps.truncate(count);
    comps
}

pub(crate) fn sign_components(grid: &Grid, u: &[f64]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; u.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..u.len() {
        if seen[start] || u[start] == 0.0 {
            continue;
        }
        let positive = u[start] > 0.0;
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in grid.neighbors(i) {
                if !seen[j] && u[j] != 0.0 && (u[j] > 0.0) == positive {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{PerturbationParams, Potential};
    use crate::grid::make_grid;

    fn ray_derivative(func: &Functional, u: &[f64], t: f64) -> f64 {
        // d/dt I(t u) by central differences
        let dt = 1e-6 * t;
        let e = |s: f64| func.energy(&u.iter().map(|x| x * s).collect::<Vec<_>>());
        (e(t + dt) - e(t - dt)) / (2.0 * dt)
    }

    #[test]
    fn ray_peak_is_stationary() {
        let g = make_grid(1, 5.0, 63).unwrap();
        let v = Potential::Harmonic(2.0).shifted(1.0).evaluate(&g).unwrap();
        let u: Vec<f64> = (0..g.len())
            .map(|i| (-g.position(i)[0].powi(2) / 2.0).exp() * 0.3)
            .collect();
        for lam in [0.0, 0.2, 1.0] {
            let params = PerturbationParams::new(lam, 1.5, 1e-10).unwrap();
            let func = Functional::new(&g, &v, params);
            let w = Projector::new(func, 1).project(&u).unwrap();
            let t = w[31] / u[31];
            let d = ray_derivative(&func, &u, t);
            assert!(
                d.abs() < 1e-5 * (1.0 + func.energy(&w).abs()),
                "lam {lam}: {d}"
            );
            assert!(
                func.energy(&w) >= func.energy(&u.iter().map(|x| x * t * 1.01).collect::<Vec<_>>())
            );
        }
    }

    #[test]
    fn piece_peak_makes_each_piece_stationary() {
        let g = make_grid(1, 5.0, 64).unwrap();
        let v = Potential::Harmonic(2.0).evaluate(&g).unwrap();
        let u: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.position(i)[0];
                x * (-x * x / 2.0).exp() * if x > 0.0 { 3.0 } else { 0.2 }
            })
            .collect();
        let params = PerturbationParams::new(0.3, 1.5, 1e-10).unwrap();
        let func = Functional::new(&g, &v, params);
        let w = Projector::new(func, 2).project(&u).unwrap();
        let grad = func.gradient(&w);
        for piece in sign_components(&g, &w) {
            let pairing: f64 = piece.iter().map(|&i| grad[i] * w[i]).sum();
            let scale: f64 = piece.iter().map(|&i| w[i] * w[i]).sum();
            assert!(pairing.abs() < 1e-9 * (1.0 + scale), "{pairing}");
        }
    }

    #[test]
    fn components_split_on_sign() {
        let g = make_grid(1, 1.0, 7).unwrap();
        let u = [1.0, 2.0, -1.0, 0.0, 3.0, 0.5, -0.1];
        let comps = sign_components(&g, &u);
        assert_eq!(comps, vec![vec![0, 1], vec![2], vec![4, 5], vec![6]]);
        assert_eq!(largest_components(&g, &u, 2), vec![vec![4, 5], vec![0, 1]]);
    }
}
