//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::energy::{validate_potential, PerturbationParams, Potential, PotentialField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::field_io::read_field;
use crate::solver::{ContinuationSchedule, MountainPassConfig};

pub const KEYS: [&str; 14] = [
    "dim",
    "half_width",
    "points",
    "potential",
    "p",
    "lambda_start",
    "lambda_ratio",
    "lambda_min",
    "tol_grad",
    "max_outer",
    "k_solutions",
    "rng_seed",
    "output_dir",
    "emit",
];

const REQUIRED: [&str; 3] = ["dim", "points", "potential"];

/// Which artifacts a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emit {
    pub fields: bool,
    pub diagnostics: bool,
    pub plotdata: bool,
    pub checks: bool,
}

impl Emit {
    pub const ALL: Emit = Emit {
        fields: true,
        diagnostics: true,
        plotdata: true,
        checks: true,
    };

    fn parse(value: &str) -> Result<Emit> {
        let mut emit = Emit {
            fields: false,
            diagnostics: false,
            plotdata: false,
            checks: false,
        };
        for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "fields" => emit.fields = true,
                "diagnostics" => emit.diagnostics = true,
                "plotdata" => emit.plotdata = true,
                "checks" => emit.checks = true,
                other => {
                    return Err(Error::config(
                        "emit",
                        format!("unknown artifact `{other}` (choose from fields, diagnostics, plotdata, checks)"),
                    ))
                }
            }
        }
        Ok(emit)
    }
}

/// A validated run description.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub grid: Grid,
    pub potential: Potential,
    /// `potential` sampled on `grid`; positive everywhere.
    pub potential_field: PotentialField,
    /// `lambda` here is the schedule start; stages override it.
    pub params: PerturbationParams,
    pub schedule: ContinuationSchedule,
    pub solver: MountainPassConfig,
    pub k_solutions: usize,
    pub output_dir: PathBuf,
    pub emit: Emit,
}

impl RunSpec {
    pub fn tol_grad(&self) -> f64 {
        self.solver.descent_tol
    }
}

/// Parses a configuration; relative `tabulated:` paths resolve against the
/// working directory.
pub fn parse_config(text: &str) -> Result<RunSpec> {
    parse_config_in(text, Path::new("."))
}

/// Reads and parses a configuration file; relative `tabulated:` paths
/// resolve against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_in(&text, base)
}

pub fn parse_config_in(text: &str, base: &Path) -> Result<RunSpec> {
    let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(line, format!("line {}: expected key=value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        if entries.insert(key, value).is_some() {
            return Err(Error::config(key, "given more than once"));
        }
    }
    for key in REQUIRED {
        if !entries.contains_key(key) {
            return Err(Error::config(key, "required key missing"));
        }
    }
    let get = |key: &str| entries.get(key).copied();

    let dim: usize = number(get("dim").unwrap_or_default(), "dim")?;
    let points: usize = number(get("points").unwrap_or_default(), "points")?;
    let half_width = match get("half_width") {
        Some(s) => number(s, "half_width")?,
        None => Grid::default_half_width(dim),
    };
    let grid = Grid::new(dim, half_width, points).map_err(|e| {
        let key = if !(1..=3).contains(&dim) {
            "dim"
        } else if points < 3 {
            "points"
        } else {
            "half_width"
        };
        Error::config(key, e.to_string())
    })?;

    let potential = parse_potential(get("potential").unwrap_or_default(), base)?;
    let potential_field = validate_potential(&grid, &potential)
        .map_err(|e| Error::config("potential", e.to_string()))?;

    let p: f64 = opt_number(get("p"), "p", crate::energy::DEFAULT_P)?;
    let lambda_start: f64 = opt_number(get("lambda_start"), "lambda_start", 1.0)?;
    let params = PerturbationParams::new(lambda_start, p, crate::energy::DEFAULT_GRAD_REG_EPS)
        .map_err(|_| {
            if !(p > 1.0 && p < 2.0) {
                Error::config("p", format!("{p} must lie in the open interval (1, 2)"))
            } else {
                Error::config("lambda_start", format!("{lambda_start} must lie in (0, 1]"))
            }
        })?;
    if lambda_start == 0.0 {
        return Err(Error::config("lambda_start", "0 must lie in (0, 1]"));
    }
    let ratio: f64 = opt_number(get("lambda_ratio"), "lambda_ratio", 0.1)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(
            "lambda_ratio",
            format!("{ratio} must lie in (0, 1), otherwise the schedule never terminates"),
        ));
    }
    let lambda_min: f64 = opt_number(get("lambda_min"), "lambda_min", 1e-4)?;
    let schedule = ContinuationSchedule::new(lambda_start, ratio, lambda_min).map_err(|_| {
        Error::config(
            "lambda_min",
            format!("{lambda_min} must lie in (0, lambda_start]"),
        )
    })?;

    let defaults = MountainPassConfig::default();
    let tol: f64 = opt_number(get("tol_grad"), "tol_grad", defaults.descent_tol)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::config("tol_grad", format!("{tol} must be positive")));
    }
    let max_outer: usize = opt_number(get("max_outer"), "max_outer", defaults.max_outer)?;
    if max_outer == 0 {
        return Err(Error::config("max_outer", "must be at least 1"));
    }
    let k_solutions: usize = opt_number(get("k_solutions"), "k_solutions", 1)?;
    if k_solutions == 0 {
        return Err(Error::config("k_solutions", "must be at least 1"));
    }
    let rng_seed: u64 = opt_number(get("rng_seed"), "rng_seed", defaults.rng_seed)?;
    let output_dir = match get("output_dir") {
        Some("") => return Err(Error::config("output_dir", "empty path")),
        Some(s) => PathBuf::from(s),
        None => PathBuf::from("out"),
    };
    let emit = match get("emit") {
        Some(s) => Emit::parse(s)?,
        None => Emit::ALL,
    };

    Ok(RunSpec {
        grid,
        potential,
        potential_field,
        params,
        schedule,
        solver: MountainPassConfig {
            descent_tol: tol,
            max_outer,
            rng_seed,
            ..defaults
        },
        k_solutions,
        output_dir,
        emit,
    })
}

fn number<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{s}` as a number")))
}

fn opt_number<T: std::str::FromStr>(s: Option<&str>, key: &str, default: T) -> Result<T> {
    s.map_or(Ok(default), |s| number(s, key))
}

/// `harmonic:a`, `quartic:c`, `shifted:<potential>:<shift>` or
/// `tabulated:<path>`.
pub fn parse_potential(text: &str, base: &Path) -> Result<Potential> {
    let err = |msg: String| Error::config("potential", msg);
    let coefficient = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| err(format!("cannot parse coefficient `{s}`")))
    };
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| err(format!("`{text}` lacks a `kind:` prefix")))?;
    match kind {
        "harmonic" => Ok(Potential::Harmonic(coefficient(rest)?)),
        "quartic" => Ok(Potential::Quartic(coefficient(rest)?)),
        "shifted" => {
            let (inner, shift) = rest
                .rsplit_once(':')
                .ok_or_else(|| err(format!("`{text}` should read shifted:<potential>:<shift>")))?;
            Ok(parse_potential(inner, base)?.shifted(coefficient(shift)?))
        }
        "tabulated" => {
            if rest.is_empty() {
                return Err(err("tabulated potential needs a path".into()));
            }
            let (_, field) = read_field(base.join(rest)).map_err(|e| err(e.to_string()))?;
            Ok(Potential::Tabulated(field))
        }
        other => Err(err(format!(
            "unknown kind `{other}` (choose from harmonic, quartic, shifted, tabulated)"
        ))),
    }
}
