//! Mountain-pass search for critical points of `I_lambda` and continuation
//! of the critical point to `lambda = 0`.
//!
//! The mountain pass is realized by peak-of-path descent: every iterate is
//! rescaled to the energy maximum along its own ray (see `peak`), so the
//! descent runs on the set of ray maxima and cannot slide into the trivial
//! minimum at `u = 0`. Search directions come from a reweighted metric that
//! freezes the `p`-Laplacian weights at the current iterate; residuals are
//! always measured with the fixed `(-Delta_h + V + 1)` Riesz map.
//!
//! The final stage at `lambda = 0` uses the unperturbed energy directly. On a
//! finite grid with `t log t^2` extended by 0 at `t = 0` that energy is
//! differentiable along every iterate, so no regularization is needed there.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{Functional, PerturbationParams, PotentialField};
use crate::error::{Error, Result};
use crate::grid::{h1v_sq, w1p_pow, Field, Grid};
use crate::linalg::{dot, WeightedOperator, SEARCH_RTOL, SOLVE_RTOL};
use crate::multiplicity::{structured_seed, DeflationSet};
use crate::peak::Projector;

/// Armijo backtracking constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Armijo {
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainPassConfig {
    /// Segments of the straight path `s t0 e`, `s in [0, 1]`.
    pub path_segments: usize,
    /// Path direction `e`; the unit-norm Gaussian bump when `None`.
    pub seed_profile: Option<Field>,
    /// Target for the preconditioned residual `||z||_{H^1_V}`.
    pub descent_tol: f64,
    pub max_outer: usize,
    pub armijo: Armijo,
    /// Iterates with `int u^2` below this count as collapsed.
    pub collapse_mass: f64,
    pub max_restarts: usize,
    /// Radius `rho` that `find_t0` must clear and `check_geometry` probes.
    pub probe_radius: f64,
    pub geometry_samples: usize,
    pub rng_seed: u64,
}

impl Default for MountainPassConfig {
    fn default() -> Self {
        MountainPassConfig {
            path_segments: 32,
            seed_profile: None,
            descent_tol: 1e-6,
            max_outer: 500,
            armijo: Armijo::default(),
            collapse_mass: 1e-8,
            max_restarts: 3,
            probe_radius: 0.5,
            geometry_samples: 64,
            rng_seed: 42,
        }
    }
}

impl MountainPassConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.path_segments < 8 {
            return bad(format!(
                "path_segments = {} (need >= 8)",
                self.path_segments
            ));
        }
        if !(self.descent_tol > 0.0) || !(self.collapse_mass > 0.0) || !(self.probe_radius > 0.0) {
            return bad("tolerances and probe radius must be positive".into());
        }
        let a = &self.armijo;
        if !(a.c1 > 0.0 && a.c1 < 1.0 && a.backtrack > 0.0 && a.backtrack < 1.0) {
            return bad(format!(
                "armijo constants c1 = {}, ratio = {}",
                a.c1, a.backtrack
            ));
        }
        if let Some(e) = &self.seed_profile {
            if e.is_zero() {
                return Err(Error::DegenerateSeed("seed profile is zero".into()));
            }
        }
        Ok(())
    }
}

/// Geometric `lambda` schedule `start, start r, start r^2, ...` down to
/// `lambda_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSchedule {
    lambda_start: f64,
    ratio: f64,
    lambda_min: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            lambda_start: 1.0,
            ratio: 0.1,
            lambda_min: 1e-4,
        }
    }
}

impl ContinuationSchedule {
    pub fn new(lambda_start: f64, ratio: f64, lambda_min: f64) -> Result<Self> {
        if !(lambda_start > 0.0 && lambda_start <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "lambda_start = {lambda_start} outside (0, 1]"
            )));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidParams(format!(
                "ratio = {ratio} outside (0, 1): the schedule would never reach lambda_min"
            )));
        }
        if !(lambda_min > 0.0 && lambda_min <= lambda_start) {
            return Err(Error::InvalidParams(format!(
                "lambda_min = {lambda_min} outside (0, lambda_start]"
            )));
        }
        Ok(ContinuationSchedule {
            lambda_start,
            ratio,
            lambda_min,
        })
    }

    pub fn lambda_start(&self) -> f64 {
        self.lambda_start
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Positive stages; the final `lambda = 0` stage is not included.
    pub fn lambdas(&self) -> Vec<f64> {
        let floor = self.lambda_min * (1.0 - 1e-9);
        (0..)
            .map(|k| self.lambda_start * self.ratio.powi(k))
            .take_while(|&l| l >= floor)
            .collect()
    }
}

/// Result of one descent run.
#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub field: Field,
    pub energy: f64,
    pub iterations: usize,
    /// `||z||_{H^1_V}` with `(-Delta_h + V + 1) z = G`.
    pub residual: f64,
    /// `sqrt(int G^2)`.
    pub raw_residual: f64,
    pub converged: bool,
    /// Set when a line search exhausted its backtracks.
    pub stalled: bool,
    /// Energies of the accepted iterates, starting at the projected `u0`;
    /// later entries accumulate the accurate per-step differences.
    pub energy_history: Vec<f64>,
    /// `sup |d|_4 / ||d||_{H^1_V}` over the search directions used.
    pub theta_proxy: f64,
}

/// Diagnostics of one continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub energy: f64,
    pub resid_precond: f64,
    pub resid_raw: f64,
    pub iterations: usize,
    pub mass: f64,
    /// `lambda ||u||^p_{W^{1,p}}`
    pub lambda_w1p_p: f64,
    pub linf: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Ordered by decreasing `lambda`, ending with `lambda = 0`.
    pub records: Vec<LambdaRecord>,
    /// Path endpoint scale.
    pub t0: f64,
    /// Largest sampled energy `I_1(s t0 e)` on the initial path.
    pub path_max: f64,
    /// `sup_s I_1(s t0 e)`, the sampled maximum refined to the exact ray peak.
    pub m2_est: f64,
    /// Minimum sampled energy on the sphere of radius `probe_radius`.
    pub alpha_est: f64,
    /// `|int (|grad u|^2 + V u^2) - int u^2 log u^2|` at the final field.
    pub nehari_defect: f64,
    /// `|I(u) - 1/2 int u^2|` at the final field.
    pub energy_mass_defect: f64,
    pub h1v_norm: f64,
    pub linf: f64,
    pub converged: bool,
    pub restarts: usize,
    pub theta_proxy: f64,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn final_record(&self) -> &LambdaRecord {
        self.records.last().expect("report has at least one record")
    }

    pub fn final_residual(&self) -> f64 {
        self.final_record().resid_precond
    }

    /// Bound `20 tol ||u||_{H^1_V}` used for the limit identities.
    pub fn identity_bound(&self, tol: f64) -> f64 {
        20.0 * tol * self.h1v_norm
    }
}

/// Internal continuation result that keeps every stage's field.
pub(crate) struct ContinuationRun {
    pub stage_fields: Vec<Field>,
    pub report: SolveReport,
}

fn check_setup(grid: &Grid, v: &PotentialField) -> Result<()> {
    grid.ensure_same(v.grid())
}

fn h1v_norm(grid: &Grid, v: &PotentialField, u: &[f64]) -> f64 {
    h1v_sq(grid, v.values(), u).max(0.0).sqrt()
}

fn mass(grid: &Grid, u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>() * grid.cell_volume()
}

fn scaled(u: &[f64], t: f64) -> Vec<f64> {
    u.iter().map(|x| x * t).collect()
}

/// Smallest `t` in `1, 2, 4, ...` with `I_lambda(t e) < 0` and
/// `||t e||_{H^1_V} > rho`.
pub fn find_t0(
    grid: &Grid,
    v: &PotentialField,
    e: &Field,
    params: &PerturbationParams,
    rho: f64,
) -> Result<f64> {
    check_setup(grid, v)?;
    grid.ensure_same(e.grid())?;
    if e.is_zero() {
        return Err(Error::DegenerateSeed("path direction is zero".into()));
    }
    let func = Functional::new(grid, v, *params);
    let norm = h1v_norm(grid, v, e.values());
    let mut t = 1.0_f64;
    for _ in 0..=60 {
        if t * norm > rho && func.energy(&scaled(e.values(), t)) < 0.0 {
            return Ok(t);
        }
        t *= 2.0;
    }
    Err(Error::DegenerateSeed(
        "energy stays nonnegative along the ray up to t = 2^60".into(),
    ))
}

/// Minimum of `I_lambda` over `samples` random fields rescaled to
/// `||u||_{H^1_V} = rho`. A positive value is evidence of the mountain-pass
/// geometry at that radius.
pub fn check_geometry(
    grid: &Grid,
    v: &PotentialField,
    params: &PerturbationParams,
    rho: f64,
    samples: usize,
    rng_seed: u64,
) -> Result<f64> {
    check_setup(grid, v)?;
    if samples == 0 {
        return Err(Error::InvalidParams(
            "check_geometry needs samples >= 1".into(),
        ));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParams(format!(
            "rho = {rho} must be positive"
        )));
    }
    let func = Functional::new(grid, v, *params);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best = f64::INFINITY;
    let mut drawn = 0;
    while drawn < samples {
        let u: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = h1v_norm(grid, v, &u);
        if norm == 0.0 {
            continue;
        }
        drawn += 1;
        best = best.min(func.energy(&scaled(&u, rho / norm)));
    }
    Ok(best)
}

struct Descent<'a> {
    grid: &'a Grid,
    v: &'a PotentialField,
    func: Functional<'a>,
    projector: Projector<'a>,
    residual_op: WeightedOperator<'a>,
    cfg: &'a MountainPassConfig,
    deflation: Option<&'a DeflationSet>,
}

impl<'a> Descent<'a> {
    fn new(
        grid: &'a Grid,
        v: &'a PotentialField,
        params: PerturbationParams,
        cfg: &'a MountainPassConfig,
        pieces: usize,
        deflation: Option<&'a DeflationSet>,
    ) -> Self {
        let func = Functional::new(grid, v, params);
        Descent {
            grid,
            v,
            func,
            projector: Projector::new(func, pieces),
            residual_op: WeightedOperator::residual_metric(grid, v),
            cfg,
            deflation: deflation.filter(|d| !d.is_empty()),
        }
    }

    fn residual(&self, gradient: &[f64]) -> f64 {
        h1v_norm(
            self.grid,
            self.v,
            &self.residual_op.solve(gradient, SOLVE_RTOL),
        )
    }

    fn run(&self, u0: &[f64]) -> Result<DescentOutcome> {
        let cfg = self.cfg;
        let hn = self.grid.cell_volume();
        let mut w = self.projector.project(u0)?;
        let mut energy = self.func.energy(&w);
        let mut history = vec![energy];
        let mut theta: f64 = 0.0;
        let mut stalled = false;
        let mut iterations = 0;
        let mut gradient = self.func.gradient(&w);
        let mut residual = self.residual(&gradient);
        while residual > cfg.descent_tol && iterations < cfg.max_outer {
            if mass(self.grid, &w) < cfg.collapse_mass {
                return Err(Error::Collapse(format!(
                    "mass {:.3e} after {iterations} iterations",
                    mass(self.grid, &w)
                )));
            }
            let metric = WeightedOperator::search_metric(self.grid, self.v, &w, &self.func.params);
            let mut dir = metric.solve(&gradient, SEARCH_RTOL);
            if let Some(ds) = self.deflation {
                let f = ds.factor(&w)?;
                dir.iter_mut().for_each(|d| *d *= f);
            }
            let dnorm = h1v_norm(self.grid, self.v, &dir);
            if dnorm > 0.0 {
                let l4 = (dir.iter().map(|d| d.powi(4)).sum::<f64>() * hn).powf(0.25);
                theta = theta.max(l4 / dnorm);
            }
            let slope = dot(&gradient, &dir) * hn;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.armijo.max_backtracks {
                let trial: Vec<f64> = w.iter().zip(&dir).map(|(x, d)| x - step * d).collect();
                if let Ok(cand) = self.projector.project(&trial) {
                    let change = self.func.energy_difference(&cand, &w);
                    if change <= -cfg.armijo.c1 * step * slope {
                        accepted = Some((cand, change));
                        break;
                    }
                }
                step *= cfg.armijo.backtrack;
            }
            let Some((cand, change)) = accepted else {
                stalled = true;
                break;
            };
            w = cand;
            energy += change;
            history.push(energy);
            iterations += 1;
            gradient = self.func.gradient(&w);
            residual = self.residual(&gradient);
        }
        // the running sum drifts by rounding; report the direct value
        energy = self.func.energy(&w);
        let raw = (dot(&gradient, &gradient) * hn).sqrt();
        Ok(DescentOutcome {
            field: Field::new(*self.grid, w)?,
            energy,
            iterations,
            residual,
            raw_residual: raw,
            converged: residual <= cfg.descent_tol,
            stalled,
            energy_history: history,
            theta_proxy: theta,
        })
    }
}

/// Armijo descent on the set of ray maxima of `I_lambda`, started from the
/// ray peak of `u0`. The zero field is returned unchanged as the trivial
/// critical point.
pub fn descend(
    grid: &Grid,
    v: &PotentialField,
    u0: &Field,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
) -> Result<DescentOutcome> {
    check_setup(grid, v)?;
    grid.ensure_same(u0.grid())?;
    cfg.validate()?;
    if u0.is_zero() {
        return Ok(DescentOutcome {
            field: u0.clone(),
            energy: 0.0,
            iterations: 0,
            residual: 0.0,
            raw_residual: 0.0,
            converged: true,
            stalled: false,
            energy_history: vec![0.0],
            theta_proxy: 0.0,
        });
    }
    Descent::new(grid, v, *params, cfg, 1, None).run(u0.values())
}

/// Output of `mountain_pass`.
#[derive(Debug, Clone)]
pub struct MountainPass {
    pub descent: DescentOutcome,
    /// `c(lambda)`, the energy of the returned critical point.
    pub c_lambda: f64,
    pub t0: f64,
    /// Largest sampled energy on the path.
    pub path_max: f64,
    /// Sampled maximum refined to the exact ray peak.
    pub path_sup: f64,
    pub restarts: usize,
}

fn seed_or_default(grid: &Grid, v: &PotentialField, cfg: &MountainPassConfig) -> Result<Field> {
    match &cfg.seed_profile {
        Some(e) => {
            grid.ensure_same(e.grid())?;
            Ok(e.clone())
        }
        None => structured_seed(grid, v, 1),
    }
}

/// Energies `I(s_i t0 e)` on `s_i = i / S`; the peak index is the smallest
/// among ties.
fn sample_path(func: &Functional, e: &[f64], t0: f64, segments: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..=segments {
        let s = i as f64 / segments as f64;
        let en = func.energy(&scaled(e, s * t0));
        if en > best.1 {
            best = (i, en);
        }
    }
    best
}

/// Exact sup of `I_lambda` along the ray through `e`.
fn ray_sup(func: Functional, e: &[f64]) -> Result<f64> {
    Ok(func.energy(&Projector::new(func, 1).project(e)?))
}

pub fn mountain_pass(
    grid: &Grid,
    v: &PotentialField,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
) -> Result<MountainPass> {
    check_setup(grid, v)?;
    cfg.validate()?;
    mountain_pass_with(grid, v, params, cfg, 1, None)
}

fn mountain_pass_with(
    grid: &Grid,
    v: &PotentialField,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
    pieces: usize,
    deflation: Option<&DeflationSet>,
) -> Result<MountainPass> {
    let e = seed_or_default(grid, v, cfg)?;
    let func = Functional::new(grid, v, *params);
    let mut t0 = find_t0(grid, v, &e, params, cfg.probe_radius)?;
    let path_sup = ray_sup(func, e.values())?;
    let descent = Descent::new(grid, v, *params, cfg, pieces, deflation);
    let mut last_err = String::new();
    for restart in 0..=cfg.max_restarts {
        let (peak, path_max) = sample_path(&func, e.values(), t0, cfg.path_segments);
        let start = scaled(e.values(), peak as f64 / cfg.path_segments as f64 * t0);
        match descent.run(&start) {
            Ok(out) if mass(grid, out.field.values()) >= cfg.collapse_mass => {
                return Ok(MountainPass {
                    c_lambda: out.energy,
                    descent: out,
                    t0,
                    path_max,
                    path_sup: path_sup.max(path_max),
                    restarts: restart,
                });
            }
            Ok(out) => last_err = format!("mass {:.3e}", mass(grid, out.field.values())),
            Err(err @ Error::DeflationProximity { .. }) => return Err(err),
            Err(err) => last_err = err.to_string(),
        }
        t0 *= 2.0;
    }
    Err(Error::Collapse(format!(
        "{} restarts exhausted ({last_err})",
        cfg.max_restarts
    )))
}

fn stage_record(grid: &Grid, lambda: f64, p: f64, out: &DescentOutcome) -> LambdaRecord {
    let u = out.field.values();
    LambdaRecord {
        lambda,
        energy: out.energy,
        resid_precond: out.residual,
        resid_raw: out.raw_residual,
        iterations: out.iterations,
        mass: mass(grid, u),
        lambda_w1p_p: if lambda == 0.0 {
            0.0
        } else {
            lambda * w1p_pow(grid, u, p)
        },
        linf: out.field.max_abs(),
        converged: out.converged,
    }
}

/// Mountain pass at `lambda_start`, warm-started descents down the schedule,
/// and a final descent at `lambda = 0`.
pub fn continue_to_limit(
    grid: &Grid,
    v: &PotentialField,
    sched: &ContinuationSchedule,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
) -> Result<(Field, SolveReport)> {
    let run = continue_with(grid, v, sched, params, cfg, 1, &[])?;
    let field = run.stage_fields.last().expect("at least one stage").clone();
    Ok((field, run.report))
}

/// `deflation[k]` deflates stage `k` (stages are the schedule's lambdas
/// followed by `lambda = 0`); an empty slice disables deflation.
pub(crate) fn continue_with(
    grid: &Grid,
    v: &PotentialField,
    sched: &ContinuationSchedule,
    params: &PerturbationParams,
    cfg: &MountainPassConfig,
    pieces: usize,
    deflation: &[DeflationSet],
) -> Result<ContinuationRun> {
    check_setup(grid, v)?;
    cfg.validate()?;
    let started = Instant::now();
    let mut lambdas = sched.lambdas();
    lambdas.push(0.0);
    let p = params.p();
    let stage_set = |k: usize| deflation.get(k);

    let e = seed_or_default(grid, v, cfg)?;
    let upper = params.with_lambda(1.0)?;
    let upper_func = Functional::new(grid, v, upper);
    let t0_upper = find_t0(grid, v, &e, &upper, cfg.probe_radius)?;
    let (_, path_max) = sample_path(&upper_func, e.values(), t0_upper, cfg.path_segments);
    let m2_est = ray_sup(upper_func, e.values())?.max(path_max);
    let alpha_est = check_geometry(
        grid,
        v,
        &params.with_lambda(lambdas[0])?,
        cfg.probe_radius,
        cfg.geometry_samples,
        cfg.rng_seed,
    )?;

    let first = params.with_lambda(lambdas[0])?;
    let mp = mountain_pass_with(grid, v, &first, cfg, pieces, stage_set(0))?;
    let mut records = vec![stage_record(grid, lambdas[0], p, &mp.descent)];
    let mut theta = mp.descent.theta_proxy;
    let mut fields = vec![mp.descent.field.clone()];
    let mut converged = mp.descent.converged;
    for (k, &lam) in lambdas.iter().enumerate().skip(1) {
        let stage_params = params.with_lambda(lam)?;
        let prev = fields.last().expect("previous stage");
        let out =
            Descent::new(grid, v, stage_params, cfg, pieces, stage_set(k)).run(prev.values())?;
        records.push(stage_record(grid, lam, p, &out));
        theta = theta.max(out.theta_proxy);
        converged = out.converged;
        fields.push(out.field);
    }

    let u = fields.last().expect("final stage").values();
    let m = mass(grid, u);
    if m < 1e-6 {
        return Err(Error::Collapse(format!(
            "final field has int u^2 = {m:.3e} < 1e-6"
        )));
    }
    let terms = Functional::new(grid, v, params.with_lambda(0.0)?).terms(u);
    let report = SolveReport {
        nehari_defect: (terms.h1v_sq() - terms.log_mass).abs(),
        energy_mass_defect: (terms.total(&params.with_lambda(0.0)?) - 0.5 * terms.mass).abs(),
        h1v_norm: terms.h1v_sq().max(0.0).sqrt(),
        linf: fields.last().expect("final stage").max_abs(),
        records,
        t0: mp.t0,
        path_max,
        m2_est,
        alpha_est,
        converged,
        restarts: mp.restarts,
        theta_proxy: theta,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(ContinuationRun {
        stage_fields: fields,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Potential;
    use crate::grid::make_grid;

    #[test]
    fn schedule_stages() {
        let s = ContinuationSchedule::default();
        let l = s.lambdas();
        assert_eq!(l.len(), 5);
        assert_eq!(l[0], 1.0);
        assert!((l[4] - 1e-4).abs() < 1e-18);
        assert!(ContinuationSchedule::new(1.0, 1.0, 1e-4).is_err());
        assert!(ContinuationSchedule::new(1.5, 0.1, 1e-4).is_err());
        assert!(ContinuationSchedule::new(1.0, 0.1, 0.0).is_err());
        assert_eq!(
            ContinuationSchedule::new(0.5, 0.5, 0.5).unwrap().lambdas(),
            vec![0.5]
        );
    }

    #[test]
    fn config_validation() {
        assert!(MountainPassConfig::default().validate().is_ok());
        let cfg = MountainPassConfig {
            path_segments: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn geometry_rejects_zero_samples() {
        let g = make_grid(1, 4.0, 16).unwrap();
        let v = Potential::Harmonic(2.0).evaluate(&g).unwrap();
        let params = PerturbationParams::default();
        assert!(check_geometry(&g, &v, &params, 0.5, 0, 1).is_err());
        assert!(check_geometry(&g, &v, &params, 0.5, 10, 1).unwrap() > 0.0);
    }
}
