//! The logarithmic nonlinearity, confining potentials, the perturbed energy
//! `I_lambda` and its Euler-Lagrange gradient.
//!
//! With `g` a forward difference on an edge and `s = g^2 + eps^2`, the
//! discrete energy is
//!
//! ```text
//! I_lambda(u) = lambda/p * (sum_e h^N (s^(p/2) - eps^p) + sum_i h^N |u_i|^p)
//!             + 1/2 * (sum_e h^N g^2 + sum_i h^N (V_i + 1) u_i^2)
//!             - 1/2 * sum_i h^N u_i^2 log u_i^2
//! ```
//!
//! and `el_gradient` is its exact derivative divided by `h^N`, so the same
//! regularized edge weight `s^((p-2)/2)` appears in both.

use crate::error::{Error, Result};
use crate::grid::{
    add_adjoint_difference, check_field, gradient_edges, neg_laplacian, Field, Grid,
};

pub const DEFAULT_P: f64 = 1.5;
pub const DEFAULT_GRAD_REG_EPS: f64 = 1e-10;

/// `t log t^2`, extended by continuity with value 0 at `t = 0`.
pub fn log_nonlin(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * (t * t).ln()
    }
}

/// `t^2 log t^2`, extended by continuity with value 0 at `t = 0`.
pub fn log_density(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        let t2 = t * t;
        t2 * t2.ln()
    }
}

/// Confining potential `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `a |x|^2`
    Harmonic(f64),
    /// `c |x|^4`
    Quartic(f64),
    /// `base(x) + shift`
    Shifted(Box<Potential>, f64),
    /// Values read from a field file; must live on the evaluation grid.
    Tabulated(Field),
}

impl Potential {
    pub fn shifted(self, shift: f64) -> Potential {
        Potential::Shifted(Box::new(self), shift)
    }

    fn check_coefficients(&self) -> Result<()> {
        match self {
            Potential::Harmonic(a) | Potential::Quartic(a) => {
                if a.is_finite() && *a > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParams(format!(
                        "potential coefficient must be positive, got {a}"
                    )))
                }
            }
            Potential::Shifted(base, s) => {
                if !s.is_finite() {
                    return Err(Error::InvalidParams(format!("non-finite shift {s}")));
                }
                base.check_coefficients()
            }
            Potential::Tabulated(_) => Ok(()),
        }
    }

    fn value(&self, grid: &Grid, flat: usize) -> f64 {
        match self {
            Potential::Harmonic(a) => a * r2(grid, flat),
            Potential::Quartic(c) => {
                let r2 = r2(grid, flat);
                c * r2 * r2
            }
            Potential::Shifted(base, s) => base.value(grid, flat) + s,
            Potential::Tabulated(f) => f.values()[flat],
        }
    }

    /// Samples the potential on `grid` without the positivity requirement.
    pub fn evaluate(&self, grid: &Grid) -> Result<PotentialField> {
        self.check_coefficients()?;
        self.check_tabulated_grids(grid)?;
        let values: Vec<f64> = (0..grid.len()).map(|i| self.value(grid, i)).collect();
        PotentialField::from_field(Field::new(*grid, values)?)
    }

    fn check_tabulated_grids(&self, grid: &Grid) -> Result<()> {
        match self {
            Potential::Tabulated(f) => grid.ensure_same(f.grid()),
            Potential::Shifted(base, _) => base.check_tabulated_grids(grid),
            _ => Ok(()),
        }
    }
}

fn r2(grid: &Grid, flat: usize) -> f64 {
    grid.position(flat)[..grid.dim()]
        .iter()
        .map(|x| x * x)
        .sum()
}

/// A potential sampled on a grid, with its grid minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    values: Field,
    min: f64,
}

impl PotentialField {
    pub fn from_field(values: Field) -> Result<Self> {
        let min = values
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(PotentialField { values, min })
    }

    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.values.values()
    }

    pub fn field(&self) -> &Field {
        &self.values
    }

    /// Grid minimum of `V`; equals `V_0` once validated.
    pub fn min(&self) -> f64 {
        self.min
    }

    /// `V + shift`, not revalidated.
    pub fn shifted(&self, shift: f64) -> PotentialField {
        PotentialField {
            values: Field::from_raw(
                *self.grid(),
                self.values().iter().map(|v| v + shift).collect(),
            ),
            min: self.min + shift,
        }
    }
}

/// Samples `v` on `grid` and requires a strictly positive minimum.
pub fn validate_potential(grid: &Grid, v: &Potential) -> Result<PotentialField> {
    let field = v.evaluate(grid)?;
    if field.min() > 0.0 {
        Ok(field)
    } else {
        Err(Error::NonPositivePotential { min: field.min() })
    }
}

/// `lambda` (0 selects the unperturbed functional), exponent `p` and the
/// edge-weight regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationParams {
    lambda: f64,
    p: f64,
    grad_reg_eps: f64,
}

impl PerturbationParams {
    pub fn new(lambda: f64, p: f64, grad_reg_eps: f64) -> Result<Self> {
        if !(lambda == 0.0 || (lambda > 0.0 && lambda <= 1.0)) {
            return Err(Error::InvalidParams(format!(
                "lambda = {lambda} must be 0 or lie in (0, 1]"
            )));
        }
        if !(p > 1.0 && p < 2.0) {
            return Err(Error::InvalidParams(format!(
                "p = {p} outside the open interval (1, 2)"
            )));
        }
        if !(grad_reg_eps.is_finite() && grad_reg_eps > 0.0) {
            return Err(Error::InvalidParams(format!(
                "grad_reg_eps = {grad_reg_eps} must be positive"
            )));
        }
        Ok(PerturbationParams {
            lambda,
            p,
            grad_reg_eps,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        PerturbationParams::new(lambda, self.p, self.grad_reg_eps)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn grad_reg_eps(&self) -> f64 {
        self.grad_reg_eps
    }
}

impl Default for PerturbationParams {
    fn default() -> Self {
        PerturbationParams {
            lambda: 1.0,
            p: DEFAULT_P,
            grad_reg_eps: DEFAULT_GRAD_REG_EPS,
        }
    }
}

/// The separately integrated pieces of `I_lambda(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    /// `sum_e h^N ((g^2 + eps^2)^(p/2) - eps^p)`
    pub grad_p: f64,
    /// `int |u|^p`
    pub mass_p: f64,
    /// `int |grad u|^2`
    pub dirichlet: f64,
    /// `int V u^2`
    pub potential: f64,
    /// `int u^2`
    pub mass: f64,
    /// `int u^2 log u^2`
    pub log_mass: f64,
}

impl EnergyTerms {
    pub fn total(&self, params: &PerturbationParams) -> f64 {
        let lam = params.lambda();
        let perturbation = if lam == 0.0 {
            0.0
        } else {
            lam / params.p() * (self.grad_p + self.mass_p)
        };
        perturbation + 0.5 * (self.dirichlet + self.potential + self.mass) - 0.5 * self.log_mass
    }

    /// `||u||_{H^1_V}^2`
    pub fn h1v_sq(&self) -> f64 {
        self.dirichlet + self.potential
    }
}

/// Slice-level evaluator shared by the public operations and the solver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Functional<'a> {
    pub grid: &'a Grid,
    pub v: &'a [f64],
    pub params: PerturbationParams,
}

impl<'a> Functional<'a> {
    pub fn new(grid: &'a Grid, v: &'a PotentialField, params: PerturbationParams) -> Self {
        Functional {
            grid,
            v: v.values(),
            params,
        }
    }

    pub fn terms(&self, u: &[f64]) -> EnergyTerms {
        let p = self.params.p();
        let eps = self.params.grad_reg_eps();
        let eps_p = eps.powf(p);
        let hn = self.grid.cell_volume();
        let edges = gradient_edges(self.grid, u);
        let mut grad_p = 0.0;
        let mut dirichlet = 0.0;
        for g in edges.iter().flatten() {
            let g2 = g * g;
            dirichlet += g2;
            grad_p += (g2 + eps * eps).powf(0.5 * p) - eps_p;
        }
        let mut mass_p = 0.0;
        let mut potential = 0.0;
        let mut mass = 0.0;
        let mut log_mass = 0.0;
        for (&x, &vi) in u.iter().zip(self.v) {
            let x2 = x * x;
            mass_p += x.abs().powf(p);
            potential += vi * x2;
            mass += x2;
            log_mass += log_density(x);
        }
        EnergyTerms {
            grad_p: grad_p * hn,
            mass_p: mass_p * hn,
            dirichlet: dirichlet * hn,
            potential: potential * hn,
            mass: mass * hn,
            log_mass: log_mass * hn,
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.terms(u).total(&self.params)
    }

    /// `I_lambda(new) - I_lambda(old)` summed term by term with
    /// cancellation-free differences, so that it stays accurate when the two
    /// fields are close and the energies themselves are large.
    pub fn energy_difference(&self, new: &[f64], old: &[f64]) -> f64 {
        let lam = self.params.lambda();
        let p = self.params.p();
        let eps2 = self.params.grad_reg_eps().powi(2);
        let delta: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
        let old_edges = gradient_edges(self.grid, old);
        let delta_edges = gradient_edges(self.grid, &delta);
        let mut edge_sum = 0.0;
        for (go, gd) in old_edges.iter().flatten().zip(delta_edges.iter().flatten()) {
            // g_new^2 - g_old^2 = d (2 g_old + d)
            let ds = gd * (2.0 * go + gd);
            let mut term = 0.5 * ds;
            if lam > 0.0 {
                term += lam / p * pow_difference(go * go + eps2, ds, 0.5 * p);
            }
            edge_sum += term;
        }
        let mut node_sum = 0.0;
        for ((&b, &d), &vi) in old.iter().zip(&delta).zip(self.v) {
            let a = b + d;
            let sq = d * (a + b);
            let mut term = 0.5 * (vi + 1.0) * sq - 0.5 * log_density_difference(a, b, sq);
            if lam > 0.0 {
                let abs_diff = if a == 0.0 && b == 0.0 {
                    0.0
                } else {
                    sq / (a.abs() + b.abs())
                };
                term += lam / p * pow_difference(b.abs(), abs_diff, p);
            }
            node_sum += term;
        }
        (edge_sum + node_sum) * self.grid.cell_volume()
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        neg_laplacian(self.grid, u, &mut out);
        for ((o, &x), &vi) in out.iter_mut().zip(u).zip(self.v) {
            *o += vi * x - log_nonlin(x);
        }
        let lam = self.params.lambda();
        if lam > 0.0 {
            let p = self.params.p();
            let eps2 = self.params.grad_reg_eps().powi(2);
            let mut pterm = vec![0.0; u.len()];
            for axis in 0..self.grid.dim() {
                let mut flux = vec![0.0; self.grid.edge_count()];
                crate::grid::edge_differences(self.grid, u, axis, &mut flux);
                for g in flux.iter_mut() {
                    *g *= (*g * *g + eps2).powf(0.5 * (p - 2.0));
                }
                add_adjoint_difference(self.grid, &flux, axis, &mut pterm);
            }
            for ((o, pt), &x) in out.iter_mut().zip(&pterm).zip(u) {
                *o += lam * (pt + x.signum() * x.abs().powf(p - 1.0));
            }
        }
        out
    }
}

/// `(x + dx)^q - x^q` for `x >= 0`, `x + dx >= 0`.
fn pow_difference(x: f64, dx: f64, q: f64) -> f64 {
    if x == 0.0 {
        (x + dx).max(0.0).powf(q)
    } else {
        x.powf(q) * (q * (dx / x).ln_1p()).exp_m1()
    }
}

/// `a^2 log a^2 - b^2 log b^2` given `sq = a^2 - b^2`.
fn log_density_difference(a: f64, b: f64, sq: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return log_density(a) - log_density(b);
    }
    // log a^2 - log b^2 = 2 log1p((|a| - |b|) / |b|)
    let ratio = sq / (a.abs() + b.abs()) / b.abs();
    sq * (a * a).ln() + b * b * 2.0 * ratio.ln_1p()
}

fn check_inputs(grid: &Grid, v: &PotentialField, u: &Field) -> Result<()> {
    check_field(grid, u)?;
    grid.ensure_same(v.grid())
}

pub fn energy_terms(
    grid: &Grid,
    v: &PotentialField,
    u: &Field,
    params: &PerturbationParams,
) -> Result<EnergyTerms> {
    check_inputs(grid, v, u)?;
    Ok(Functional::new(grid, v, *params).terms(u.values()))
}

/// `I_lambda(u)`; with `lambda = 0` this is the unperturbed functional `I`.
pub fn energy_total(
    grid: &Grid,
    v: &PotentialField,
    u: &Field,
    params: &PerturbationParams,
) -> Result<f64> {
    Ok(energy_terms(grid, v, u, params)?.total(params))
}

/// Field `G` with `integrate(G * phi) = <I'_lambda(u), phi>` for every `phi`.
pub fn el_gradient(
    grid: &Grid,
    v: &PotentialField,
    u: &Field,
    params: &PerturbationParams,
) -> Result<Field> {
    check_inputs(grid, v, u)?;
    Field::new(
        *grid,
        Functional::new(grid, v, *params).gradient(u.values()),
    )
}

/// Strong-form residual `-Delta_h u + V u - u log u^2` of the unperturbed
/// equation. The potential need not be positive here.
pub fn residual_original(grid: &Grid, v: &PotentialField, u: &Field) -> Result<Field> {
    check_inputs(grid, v, u)?;
    let mut out = vec![0.0; grid.len()];
    neg_laplacian(grid, u.values(), &mut out);
    for ((o, &x), &vi) in out.iter_mut().zip(u.values()).zip(v.values()) {
        *o += vi * x - log_nonlin(x);
    }
    Field::new(*grid, out)
}
