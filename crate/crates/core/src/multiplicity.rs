//! Several distinct critical points with increasing energies, found by
//! continuation from structured nodal seeds with deflation against the
//! solutions already accepted.
//!
//! This is a heuristic: finding `k` solutions is evidence for the
//! multiplicity of critical points, not a proof, and no topological index
//! is computed.

use crate::energy::{Functional, PerturbationParams, PotentialField};
use crate::error::{Error, Result};
use crate::grid::{h1v_sq, Field, Grid};
use crate::solver::{continue_with, ContinuationSchedule, MountainPassConfig, SolveReport};

pub const DEFAULT_DEFLATION_POWER: f64 = 2.0;
pub const DEFAULT_DEFLATION_SHIFT: f64 = 1.0;
pub const DEFAULT_SEPARATION: f64 = 0.1;
/// Energies closer than this are flagged as possible duplicates.
pub const ENERGY_MARGIN: f64 = 1e-6;

/// Previously converged solutions that new iterates are pushed away from.
#[derive(Debug, Clone)]
pub struct DeflationSet {
    potential: PotentialField,
    solutions: Vec<Field>,
    power: f64,
    shift: f64,
    separation: f64,
}

impl DeflationSet {
    pub fn new(potential: PotentialField) -> Self {
        DeflationSet {
            potential,
            solutions: Vec::new(),
            power: DEFAULT_DEFLATION_POWER,
            shift: DEFAULT_DEFLATION_SHIFT,
            separation: DEFAULT_SEPARATION,
        }
    }

    pub fn with_params(mut self, power: f64, shift: f64, separation: f64) -> Result<Self> {
        if !(power > 0.0 && shift >= 0.0 && separation > 0.0) {
            return Err(Error::InvalidParams(format!(
                "deflation power {power}, shift {shift}, separation {separation}"
            )));
        }
        self.power = power;
        self.shift = shift;
        self.separation = separation;
        Ok(self)
    }

    pub fn solutions(&self) -> &[Field] {
        &self.solutions
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// `min(||u - u_i||, ||u + u_i||)` in the `H^1_V` norm.
    pub fn distance_mod_sign(&self, u: &Field, i: usize) -> f64 {
        sign_distance(
            self.potential.grid(),
            self.potential.values(),
            u.values(),
            self.solutions[i].values(),
        )
    }

    /// Closest stored solution modulo sign.
    pub fn nearest(&self, u: &Field) -> Option<(usize, f64)> {
        (0..self.solutions.len())
            .map(|i| (i, self.distance_mod_sign(u, i)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// True when `u` lies within the separation of some stored `u_i` or `-u_i`.
    pub fn is_duplicate(&self, u: &Field) -> bool {
        self.nearest(u).is_some_and(|(_, d)| d < self.separation)
    }

    /// Stores a solution, rejecting it if it duplicates a stored one.
    pub fn push(&mut self, u: Field) -> Result<()> {
        self.potential.grid().ensure_same(u.grid())?;
        if let Some((index, distance)) = self.nearest(&u) {
            if distance < self.separation {
                return Err(Error::DeflationProximity {
                    index,
                    distance,
                    limit: self.separation,
                });
            }
        }
        self.solutions.push(u);
        Ok(())
    }

    pub(crate) fn factor(&self, u: &[f64]) -> Result<f64> {
        let grid = self.potential.grid();
        let limit = 0.5 * self.separation;
        let mut factor = 1.0;
        for (index, sol) in self.solutions.iter().enumerate() {
            let distance = sign_distance(grid, self.potential.values(), u, sol.values());
            if distance < limit {
                return Err(Error::DeflationProximity {
                    index,
                    distance,
                    limit,
                });
            }
            factor *= distance.powf(-self.power) + self.shift;
        }
        Ok(factor)
    }
}

fn sign_distance(grid: &Grid, v: &[f64], u: &[f64], w: &[f64]) -> f64 {
    let minus: Vec<f64> = u.iter().zip(w).map(|(a, b)| a - b).collect();
    let plus: Vec<f64> = u.iter().zip(w).map(|(a, b)| a + b).collect();
    h1v_sq(grid, v, &minus)
        .min(h1v_sq(grid, v, &plus))
        .max(0.0)
        .sqrt()
}

/// Scales the direction `z` by `prod_i (||u - u_i||^(-power) + shift)`.
pub fn deflate_direction(z: &Field, u: &Field, ds: &DeflationSet) -> Result<Field> {
    z.grid().ensure_same(u.grid())?;
    ds.potential.grid().ensure_same(u.grid())?;
    Ok(z.scaled(ds.factor(u.values())?))
}

/// The `j`-th nodal seed: the Hermite function with `j - 1` sign changes
/// along the first axis times Gaussians `exp(-x_d^2 / 2)` along the others,
/// normalized to unit `H^1_V` norm.
pub fn structured_seed(grid: &Grid, v: &PotentialField, j: usize) -> Result<Field> {
    grid.ensure_same(v.grid())?;
    let n = grid.points_per_dim();
    if j == 0 || 2 * j >= n {
        return Err(Error::InvalidParams(format!(
            "seed index {j} needs 1 <= j < {} on {n} points per axis",
            n.div_ceil(2)
        )));
    }
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.position(i);
            let envelope: f64 = (1..grid.dim())
                .map(|d| (-0.5 * x[d] * x[d]).exp())
                .product();
            hermite_function(j - 1, x[0]) * envelope
        })
        .collect();
    let norm = h1v_sq(grid, v.values(), &values).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateSeed(format!("seed {j} has norm {norm}")));
    }
    Field::new(*grid, values.into_iter().map(|x| x / norm).collect())
}

/// Normalized Hermite function `psi_k(x)` by the stable three-term recurrence.
fn hermite_function(k: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    for m in 0..k {
        let next =
            (2.0 / (m as f64 + 1.0)).sqrt() * x * cur - (m as f64 / (m as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// One accepted critical point.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: Field,
    /// `I(u)` at `lambda = 0`.
    pub energy: f64,
    pub report: SolveReport,
    /// Seed index the solution was continued from.
    pub seed: usize,
    /// Set when the energy is within `ENERGY_MARGIN` of its predecessor.
    pub possible_duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct Multiplicity {
    /// Accepted solutions, sorted by energy.
    pub solutions: Vec<Solution>,
    pub attempts: usize,
    /// One line per rejected attempt, and a summary line when fewer than
    /// `k` solutions were accepted.
    pub diagnostics: Vec<String>,
}

impl Multiplicity {
    pub fn complete(&self, k: usize) -> bool {
        self.solutions.len() >= k
    }
}

/// Continues structured seeds `1, 2, ...` (at most `3k` attempts) to
/// `lambda = 0`, deflating each continuation stage against the accepted
/// solutions of the same stage, until `k` distinct solutions are accepted.
/// Attempt `a` keeps the `a` largest nodal pieces of its iterates at their
/// own energy peaks.
pub fn find_k_solutions(
    grid: &Grid,
    v: &PotentialField,
    sched: &ContinuationSchedule,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
    k: usize,
) -> Result<Multiplicity> {
    if k == 0 {
        return Err(Error::InvalidParams(
            "k_solutions must be at least 1".into(),
        ));
    }
    grid.ensure_same(v.grid())?;
    let stages = sched.lambdas().len() + 1;
    let mut sets = vec![DeflationSet::new(v.clone()); stages];
    let mut accepted: Vec<Solution> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut attempts = 0;
    for seed_index in 1..=3 * k {
        if accepted.len() == k {
            break;
        }
        let seed = match structured_seed(grid, v, seed_index) {
            Ok(s) => s,
            Err(e) => {
                diagnostics.push(format!("seed {seed_index}: {e}"));
                break;
            }
        };
        attempts += 1;
        let cfg_a = MountainPassConfig {
            seed_profile: Some(seed),
            ..cfg.clone()
        };
        let run = match continue_with(grid, v, sched, params, &cfg_a, seed_index, &sets) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(format!("seed {seed_index}: {e}"));
                continue;
            }
        };
        let last = sets.len() - 1;
        let final_field = run.stage_fields[last].clone();
        if !run.report.converged {
            diagnostics.push(format!(
                "seed {seed_index}: residual {:.3e} above tolerance",
                run.report.final_residual()
            ));
            continue;
        }
        if sets[last].is_duplicate(&final_field) {
            diagnostics.push(format!(
                "seed {seed_index}: duplicate of an accepted solution"
            ));
            continue;
        }
        for (set, f) in sets.iter_mut().zip(&run.stage_fields) {
            // stage fields of distinct limits may still be close at large
            // lambda; keep them anyway as the deflation targets
            set.solutions.push(f.clone());
        }
        let energy =
            Functional::new(grid, v, params.with_lambda(0.0)?).energy(final_field.values());
        accepted.push(Solution {
            field: final_field,
            energy,
            report: run.report,
            seed: seed_index,
            possible_duplicate: false,
        });
    }
    accepted.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    for i in 1..accepted.len() {
        if accepted[i].energy - accepted[i - 1].energy < ENERGY_MARGIN {
            accepted[i].possible_duplicate = true;
        }
    }
    if accepted.len() < k {
        diagnostics.push(format!(
            "accepted {} of {k} solutions after {attempts} attempts",
            accepted.len()
        ));
    }
    Ok(Multiplicity {
        solutions: accepted,
        attempts,
        diagnostics,
    })
}
