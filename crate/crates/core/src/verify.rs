//! Named identity and inequality checks. Every check returns a signed
//! margin; identity checks pass when `|margin| <= tolerance`, inequality
//! checks when `margin >= 0`.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{
    log_density, residual_original, Functional, PerturbationParams, PotentialField,
};
use crate::error::{Error, Result};
use crate::grid::{gradient_edges, Field, Grid};

pub const NEHARI_TOL: f64 = 1e-3;
pub const ENERGY_IDENTITY_TOL: f64 = 1e-10;
pub const SCALING_TOL: f64 = 1e-12;
pub const LOG_SOBOLEV_SLACK: f64 = 1e-8;
pub const LINF_CAP: f64 = 1e3;
pub const GRADIENT_FD_TOL: f64 = 1e-6;
pub const GRADIENT_FD_STEP: f64 = 1e-5;

/// The check registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckName {
    Nehari,
    EnergyIdentity,
    Scaling,
    LogSobolev,
    Linf,
    GradientFd,
}

impl CheckName {
    pub const ALL: [CheckName; 6] = [
        CheckName::Nehari,
        CheckName::EnergyIdentity,
        CheckName::Scaling,
        CheckName::LogSobolev,
        CheckName::Linf,
        CheckName::GradientFd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Nehari => "nehari",
            CheckName::EnergyIdentity => "energy_identity",
            CheckName::Scaling => "scaling",
            CheckName::LogSobolev => "log_sobolev",
            CheckName::Linf => "linf",
            CheckName::GradientFd => "gradient_fd",
        }
    }

    pub fn parse(s: &str) -> Option<CheckName> {
        CheckName::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Inequality checks pass on a nonnegative margin.
    pub fn is_inequality(self) -> bool {
        matches!(self, CheckName::LogSobolev | CheckName::Linf)
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a check was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputsDigest {
    /// FNV-1a hash of the grid description; 0 for grid-free checks.
    pub grid_hash: u64,
    pub lambda: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: CheckName,
    pub margin: f64,
    /// Identity checks: largest admissible `|margin|`. Inequality checks:
    /// the threshold parameter (cap or slack) that entered the margin.
    pub tolerance: f64,
    pub digest: InputsDigest,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        if !self.margin.is_finite() {
            return false;
        }
        if self.name.is_inequality() {
            self.margin >= 0.0
        } else {
            self.margin.abs() <= self.tolerance
        }
    }

    /// Same margin judged against another tolerance (identity checks only).
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        if !self.name.is_inequality() {
            self.tolerance = tolerance;
        }
        self
    }
}

pub fn grid_hash(grid: &Grid) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&(grid.dim() as u64).to_le_bytes());
    eat(&(grid.points_per_dim() as u64).to_le_bytes());
    eat(&grid.half_width().to_bits().to_le_bytes());
    h
}

fn digest(grid: &Grid, params: Option<&PerturbationParams>) -> InputsDigest {
    InputsDigest {
        grid_hash: grid_hash(grid),
        lambda: params.map(|p| p.lambda()),
        p: params.map(|p| p.p()),
    }
}

fn check_inputs(grid: &Grid, v: &PotentialField, u: &Field) -> Result<()> {
    grid.ensure_same(u.grid())?;
    grid.ensure_same(v.grid())
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `int (|grad u|^2 + V u^2) = int u^2 log u^2`, margin
/// `|lhs - rhs| / (1 + |lhs|)`.
pub fn check_nehari(grid: &Grid, v: &PotentialField, u: &Field) -> Result<CheckResult> {
    check_inputs(grid, v, u)?;
    let terms = Functional::new(grid, v, PerturbationParams::default()).terms(u.values());
    let lhs = terms.h1v_sq();
    Ok(CheckResult {
        name: CheckName::Nehari,
        margin: (lhs - terms.log_mass).abs() / (1.0 + lhs.abs()),
        tolerance: NEHARI_TOL,
        digest: digest(grid, None),
    })
}

/// `2 I_lambda(u) - <I'_lambda(u), u> = lambda R_p(u) + int u^2`, where
/// `R_p` is `(2-p)/p (int |grad u|^p + int |u|^p)` with the same edge
/// regularization as the energy. Holds for every field.
pub fn check_energy_identity(
    grid: &Grid,
    v: &PotentialField,
    u: &Field,
    params: &PerturbationParams,
) -> Result<CheckResult> {
    check_inputs(grid, v, u)?;
    let func = Functional::new(grid, v, *params);
    let hn = grid.cell_volume();
    let x = u.values();
    let pairing: f64 = func
        .gradient(x)
        .iter()
        .zip(x)
        .map(|(g, x)| g * x)
        .sum::<f64>()
        * hn;
    let lhs = 2.0 * func.energy(x) - pairing;

    let lam = params.lambda();
    let p = params.p();
    let eps = params.grad_reg_eps();
    let mass: f64 = x.iter().map(|x| x * x).sum::<f64>() * hn;
    let mut rhs = mass;
    if lam > 0.0 {
        // with s = g^2 + eps^2: 2/p (s^(p/2) - eps^p) - s^((p-2)/2) g^2
        let edge: f64 = gradient_edges(grid, x)
            .iter()
            .flatten()
            .map(|g| {
                let s = g * g + eps * eps;
                (2.0 - p) / p * s.powf(0.5 * p) + eps * eps * s.powf(0.5 * (p - 2.0))
                    - 2.0 / p * eps.powf(p)
            })
            .sum();
        let node: f64 = x.iter().map(|x| x.abs().powf(p)).sum();
        rhs += lam * (edge + (2.0 - p) / p * node) * hn;
    }
    Ok(CheckResult {
        name: CheckName::EnergyIdentity,
        margin: relative_gap(lhs, rhs),
        tolerance: ENERGY_IDENTITY_TOL,
        digest: digest(grid, Some(params)),
    })
}

/// Scaling equivariance: `residual_{V - log mu^2}(v) = residual_V(mu v) / mu`
/// pointwise; margin is the max-norm defect relative to the larger side.
pub fn check_scaling(grid: &Grid, v: &PotentialField, w: &Field, mu: f64) -> Result<CheckResult> {
    check_inputs(grid, v, w)?;
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::InvalidParams(format!("scaling factor mu = {mu}")));
    }
    let shifted = v.shifted(-(mu * mu).ln());
    let lhs = residual_original(grid, &shifted, w)?;
    let rhs = residual_original(grid, v, &w.scaled(mu))?.scaled(1.0 / mu);
    let defect = lhs.add_scaled(-1.0, &rhs)?.max_abs();
    let scale = lhs.max_abs().max(rhs.max_abs());
    Ok(CheckResult {
        name: CheckName::Scaling,
        margin: if scale == 0.0 { 0.0 } else { defect / scale },
        tolerance: SCALING_TOL,
        digest: digest(grid, None),
    })
}

/// `int u^2 log u^2 <= a^2/pi int |grad u|^2 + (log |u|_2^2 - N (1 + log a)) |u|_2^2`,
/// margin `rhs - lhs + 1e-8 (1 + |lhs|)`.
pub fn check_log_sobolev(grid: &Grid, u: &Field, a: f64) -> Result<CheckResult> {
    grid.ensure_same(u.grid())?;
    if !(a > 0.0) {
        return Err(Error::InvalidParams(format!(
            "log-Sobolev parameter a = {a}"
        )));
    }
    let hn = grid.cell_volume();
    let x = u.values();
    let mass: f64 = x.iter().map(|x| x * x).sum::<f64>() * hn;
    if mass == 0.0 {
        return Err(Error::InvalidField(
            "log-Sobolev check needs a nonzero field".into(),
        ));
    }
    let dirichlet: f64 = gradient_edges(grid, x)
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        * hn;
    let lhs: f64 = x.iter().map(|&t| log_density(t)).sum::<f64>() * hn;
    let n = grid.dim() as f64;
    let rhs = a * a / PI * dirichlet + (mass.ln() - n * (1.0 + a.ln())) * mass;
    Ok(CheckResult {
        name: CheckName::LogSobolev,
        margin: rhs - lhs + LOG_SOBOLEV_SLACK * (1.0 + lhs.abs()),
        tolerance: LOG_SOBOLEV_SLACK,
        digest: digest(grid, None),
    })
}

/// `max |u| <= cap`, margin `cap - max |u|`.
pub fn check_linf(u: &Field, cap: f64) -> Result<CheckResult> {
    if !(cap > 0.0) {
        return Err(Error::InvalidParams(format!("L-infinity cap {cap}")));
    }
    Ok(CheckResult {
        name: CheckName::Linf,
        margin: cap - u.max_abs(),
        tolerance: cap,
        digest: digest(u.grid(), None),
    })
}

/// Worst central-difference pairing defect
/// `|int G phi - (I(u + e phi) - I(u - e phi)) / 2e| / (1 + |.|)` over random
/// `(u, phi)` with entries in `[-2, 2]`, `e = 1e-5`.
pub fn check_gradient_fd(
    grid: &Grid,
    v: &PotentialField,
    params: &PerturbationParams,
    trials: usize,
    rng_seed: u64,
) -> Result<CheckResult> {
    check_gradient_fd_with_amplitude(grid, v, params, trials, rng_seed, 2.0)
}

/// `check_gradient_fd` with entries drawn from `[-amplitude, amplitude]`.
pub fn check_gradient_fd_with_amplitude(
    grid: &Grid,
    v: &PotentialField,
    params: &PerturbationParams,
    trials: usize,
    rng_seed: u64,
    amplitude: f64,
) -> Result<CheckResult> {
    grid.ensure_same(v.grid())?;
    if trials == 0 {
        return Err(Error::InvalidParams(
            "check_gradient_fd needs trials >= 1".into(),
        ));
    }
    if !(amplitude > 0.0) {
        return Err(Error::InvalidParams(format!("amplitude {amplitude}")));
    }
    let func = Functional::new(grid, v, *params);
    let hn = grid.cell_volume();
    let eps = GRADIENT_FD_STEP;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut draw = || -> Vec<f64> {
            (0..grid.len())
                .map(|_| rng.gen_range(-amplitude..=amplitude))
                .collect()
        };
        let u = draw();
        let phi = draw();
        let pairing: f64 = func
            .gradient(&u)
            .iter()
            .zip(&phi)
            .map(|(g, f)| g * f)
            .sum::<f64>()
            * hn;
        let plus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a - eps * b).collect();
        let fd = func.energy_difference(&plus, &minus) / (2.0 * eps);
        worst = worst.max((pairing - fd).abs() / (1.0 + fd.abs()));
    }
    Ok(CheckResult {
        name: CheckName::GradientFd,
        margin: worst,
        tolerance: GRADIENT_FD_TOL,
        digest: digest(grid, Some(params)),
    })
}
