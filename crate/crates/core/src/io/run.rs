//! Run orchestration and CSV / plot-data emission.

use std::fmt;
use std::fmt::Write as _;
use std::fs;

use crate::energy::PotentialField;
use crate::error::{Error, Result};
use crate::grid::{norm_h1v, Field, Grid};
use crate::io::config::RunSpec;
use crate::io::field_io::{write_atomic, write_field};
use crate::multiplicity::{find_k_solutions, Solution};
use crate::verify::{
    check_energy_identity, check_gradient_fd, check_linf, check_log_sobolev, check_nehari,
    check_scaling, CheckName, CheckResult, LINF_CAP,
};

/// Checks every accepted solution must pass for a zero exit status.
pub const GATING_CHECKS: [CheckName; 3] = [
    CheckName::Nehari,
    CheckName::EnergyIdentity,
    CheckName::Linf,
];

/// Scale factor of the scaling check.
pub const SCALING_MU: f64 = 0.3;
/// Parameter `a` of the log-Sobolev check.
pub const LOG_SOBOLEV_A: f64 = 1.0;
pub const GRADIENT_FD_TRIALS: usize = 20;

/// Reason for a nonzero exit, printed as `FAIL <stage> <detail>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub stage: &'static str,
    pub detail: String,
}

impl Failure {
    pub fn new(stage: &'static str, detail: impl Into<String>) -> Self {
        // keep the reason on one line
        let detail = detail.into().replace(['\n', '\r'], " ");
        Failure { stage, detail }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FAIL {} {}", self.stage, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub solutions: Vec<Solution>,
    /// `(j, result)` with `j` counted from 1.
    pub checks: Vec<(usize, CheckResult)>,
    pub failure: Option<Failure>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failure.is_some())
    }
}

/// Every registry check on `u`. The Nehari tolerance is
/// `20 tol_grad ||u||_{H^1_V}`.
pub fn registry_checks(spec: &RunSpec, u: &Field) -> Result<Vec<CheckResult>> {
    let grid = &spec.grid;
    let v = &spec.potential_field;
    let tol = spec.tol_grad();
    let norm = norm_h1v(grid, v, u)?;
    let params = spec.params.with_lambda(spec.schedule.lambda_min())?;
    let mut out = vec![
        check_nehari(grid, v, u)?.with_tolerance(20.0 * tol * norm),
        check_energy_identity(grid, v, u, &params)?,
        check_scaling(grid, v, u, SCALING_MU)?,
    ];
    if !u.is_zero() {
        out.push(check_log_sobolev(grid, u, LOG_SOBOLEV_A)?);
    }
    out.push(check_linf(u, LINF_CAP)?);
    out.push(check_gradient_fd(
        grid,
        v,
        &params,
        GRADIENT_FD_TRIALS,
        spec.solver.rng_seed,
    )?);
    Ok(out)
}

/// First gating check that fails, if any.
pub fn gating_failure(checks: &[(usize, CheckResult)]) -> Option<Failure> {
    checks
        .iter()
        .find(|(_, c)| GATING_CHECKS.contains(&c.name) && !c.passed())
        .map(|(j, c)| {
            Failure::new(
                "checks",
                format!(
                    "solution {j} {} margin {:e} tolerance {:e}",
                    c.name, c.margin, c.tolerance
                ),
            )
        })
}

pub fn diagnostics_csv(solutions: &[Solution]) -> String {
    let mut s =
        String::from("j,lambda,energy,resid_precond,resid_raw,iters,mass,lambda_w1p_p,linf\n");
    for (j, sol) in solutions.iter().enumerate() {
        for r in &sol.report.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e}",
                j + 1,
                r.lambda,
                r.energy,
                r.resid_precond,
                r.resid_raw,
                r.iterations,
                r.mass,
                r.lambda_w1p_p,
                r.linf
            );
        }
    }
    s
}

pub fn checks_csv(checks: &[(usize, CheckResult)]) -> String {
    let mut s = String::from("j,check_name,margin,tolerance,pass\n");
    for (j, c) in checks {
        let _ = writeln!(
            s,
            "{j},{},{:e},{:e},{}",
            c.name,
            c.margin,
            c.tolerance,
            c.passed()
        );
    }
    s
}

/// `lambda c(lambda)` columns, one gnuplot data block per solution.
pub fn energy_vs_lambda(solutions: &[Solution]) -> String {
    let mut s = String::new();
    for (j, sol) in solutions.iter().enumerate() {
        if j > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# solution {}: lambda energy", j + 1);
        for r in &sol.report.records {
            let _ = writeln!(s, "{:e} {:e}", r.lambda, r.energy);
        }
    }
    s
}

fn io_failure(e: Error) -> Failure {
    Failure::new("io", e.to_string())
}

/// Solves, checks and writes the requested artifacts into
/// `spec.output_dir`. Progress goes to stderr unless `quiet`.
pub fn run(spec: &RunSpec, quiet: bool) -> RunSummary {
    let mut summary = RunSummary {
        solutions: Vec::new(),
        checks: Vec::new(),
        failure: None,
    };
    let dir = &spec.output_dir;
    if let Err(e) = fs::create_dir_all(dir) {
        summary.failure = Some(io_failure(Error::io(dir, e)));
        return summary;
    }

    let found = match find_k_solutions(
        &spec.grid,
        &spec.potential_field,
        &spec.schedule,
        &spec.params,
        &spec.solver,
        spec.k_solutions,
    ) {
        Ok(m) => m,
        Err(e) => {
            summary.failure = Some(Failure::new("solve", e.to_string()));
            return summary;
        }
    };
    if !quiet {
        for line in &found.diagnostics {
            eprintln!("{line}");
        }
    }
    for (j, sol) in found.solutions.iter().enumerate() {
        if !quiet {
            eprintln!(
                "solution {}: energy {:.10} residual {:.3e} converged {} ({:.2} s)",
                j + 1,
                sol.energy,
                sol.report.final_residual(),
                sol.report.converged,
                sol.report.wall_time_s
            );
        }
        match registry_checks(spec, &sol.field) {
            Ok(cs) => summary.checks.extend(cs.into_iter().map(|c| (j + 1, c))),
            Err(e) => {
                summary.failure = Some(Failure::new("checks", e.to_string()));
                break;
            }
        }
    }
    summary.solutions = found.solutions;

    if let Err(f) = emit(spec, &summary) {
        summary.failure = Some(f);
        return summary;
    }
    if summary.failure.is_none() && summary.solutions.len() < spec.k_solutions {
        summary.failure = Some(Failure::new(
            "multiplicity",
            format!(
                "found {} of {} solutions in {} attempts",
                summary.solutions.len(),
                spec.k_solutions,
                found.attempts
            ),
        ));
    }
    if summary.failure.is_none() {
        summary.failure = gating_failure(&summary.checks);
    }
    summary
}

fn emit(spec: &RunSpec, summary: &RunSummary) -> std::result::Result<(), Failure> {
    let dir = &spec.output_dir;
    if spec.emit.fields {
        for (j, sol) in summary.solutions.iter().enumerate() {
            write_field(
                dir.join(format!("u_{}.lsef", j + 1)),
                &spec.grid,
                &sol.field,
            )
            .map_err(io_failure)?;
        }
    }
    let text_files = [
        (
            spec.emit.diagnostics,
            "diagnostics.csv",
            diagnostics_csv(&summary.solutions),
        ),
        (spec.emit.checks, "checks.csv", checks_csv(&summary.checks)),
        (
            spec.emit.plotdata,
            "energy_vs_lambda.dat",
            energy_vs_lambda(&summary.solutions),
        ),
    ];
    for (wanted, name, body) in text_files {
        if wanted {
            write_atomic(&dir.join(name), body.as_bytes()).map_err(io_failure)?;
        }
    }
    Ok(())
}

/// Registry checks on a stored field against a configuration, as run by
/// the `verify` subcommand.
pub fn verify_field(
    spec: &RunSpec,
    grid: &Grid,
    u: &Field,
) -> std::result::Result<Vec<CheckResult>, Failure> {
    spec.grid
        .ensure_same(grid)
        .map_err(|e| Failure::new("verify", e.to_string()))?;
    registry_checks(spec, u).map_err(|e| Failure::new("verify", e.to_string()))
}

/// `||u||_{H^1_V}`, `int u^2` and `max |u|`, for `info`.
pub fn field_summary(grid: &Grid, v: Option<&PotentialField>, u: &Field) -> Result<String> {
    let mass: f64 = u.values().iter().map(|x| x * x).sum::<f64>() * grid.cell_volume();
    let mut s = format!(
        "{} spacing={} values={} max_abs={:e} mass={:e}",
        grid.describe(),
        grid.spacing(),
        u.len(),
        u.max_abs(),
        mass
    );
    if let Some(v) = v {
        let _ = write!(s, " h1v_norm={:e}", norm_h1v(grid, v, u)?);
    }
    Ok(s)
}
