use std::fs;
use std::process::Command;

use lse_core::grid::{make_grid, Field};
use lse_core::io::field_io::{decode_field, encode_field};
use lse_core::io::{parse_config, read_field, read_header, run, write_field, Emit};
use lse_core::Error;

const GAUSSON_CONFIG: &str = "dim=1\nhalf_width=8\npoints=1022\npotential=harmonic:2.0\np=1.5\nlambda_start=1.0\nlambda_ratio=0.1\nlambda_min=1e-4\ntol_grad=1e-6\nmax_outer=500\nk_solutions=1\nrng_seed=42\noutput_dir=out\nemit=fields,checks";

fn config_error_key(text: &str) -> String {
    match parse_config(text) {
        Err(Error::Config { key, .. }) => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn with_line(key: &str, value: &str) -> String {
    GAUSSON_CONFIG
        .lines()
        .map(|l| {
            if l.starts_with(&format!("{key}=")) {
                format!("{key}={value}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn gausson_config_parses() {
    let spec = parse_config(GAUSSON_CONFIG).unwrap();
    assert_eq!(spec.grid.dim(), 1);
    assert_eq!(spec.grid.points_per_dim(), 1022);
    assert_eq!(spec.params.p(), 1.5);
    assert_eq!(spec.schedule.lambdas().len(), 5);
    assert_eq!(spec.tol_grad(), 1e-6);
    assert_eq!(spec.solver.max_outer, 500);
    assert_eq!(spec.solver.rng_seed, 42);
    assert_eq!(spec.k_solutions, 1);
    assert_eq!(spec.output_dir.to_str(), Some("out"));
    assert_eq!(
        spec.emit,
        Emit {
            fields: true,
            diagnostics: false,
            plotdata: false,
            checks: true
        }
    );
}

#[test]
fn config_errors_name_the_key() {
    let p_err = parse_config(&with_line("p", "2.0"))
        .unwrap_err()
        .to_string();
    assert!(p_err.contains("`p`") && p_err.contains("(1, 2)"), "{p_err}");
    assert_eq!(
        config_error_key(&with_line("lambda_ratio", "1.0")),
        "lambda_ratio"
    );
    assert_eq!(
        config_error_key(&format!("{GAUSSON_CONFIG}\ncolour=red")),
        "colour"
    );
    assert_eq!(config_error_key("dim=1\npoints=64"), "potential");
    assert_eq!(
        config_error_key(&with_line("potential", "harmonic:-1")),
        "potential"
    );
    assert_eq!(
        config_error_key(&with_line("emit", "fields,movies")),
        "emit"
    );
    assert_eq!(config_error_key(&with_line("points", "2")), "points");
    assert_eq!(
        config_error_key(&with_line("k_solutions", "0")),
        "k_solutions"
    );
    assert_eq!(config_error_key(&format!("{GAUSSON_CONFIG}\ndim=2")), "dim");
}

#[test]
fn comments_defaults_and_potential_forms() {
    let spec = parse_config(
        "# comment\ndim=2 # trailing\npoints=8\npotential=shifted:harmonic:2.0:+1.0\n",
    )
    .unwrap();
    assert_eq!(spec.grid.half_width(), 6.0);
    assert_eq!(spec.emit, Emit::ALL);
    assert!(spec.potential_field.min() >= 1.0);
    parse_config("dim=1\npoints=8\npotential=quartic:1.0").unwrap();
    // quartic vanishes nowhere on an even grid
    let err = parse_config("dim=1\npoints=9\npotential=quartic:1.0").unwrap_err();
    assert!(err.to_string().contains("potential"), "{err}");
}

#[test]
fn tabulated_potential_reads_field_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = make_grid(1, 8.0, 16).unwrap();
    let v = Field::from_fn(g, |x| 1.0 + x[0] * x[0]).unwrap();
    write_field(dir.path().join("v.lsef"), &g, &v).unwrap();
    let text = format!(
        "dim=1\npoints=16\npotential=tabulated:{}",
        dir.path().join("v.lsef").display()
    );
    let spec = parse_config(&text).unwrap();
    assert_eq!(spec.potential_field.values(), v.values());
    let wrong = format!(
        "dim=1\npoints=17\npotential=tabulated:{}",
        dir.path().join("v.lsef").display()
    );
    assert!(parse_config(&wrong).is_err());
}

#[test]
fn field_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let g = make_grid(1, 8.0, 1022).unwrap();
    let u = Field::from_fn(g, |x| std::f64::consts::E * (-x[0] * x[0]).exp()).unwrap();
    let path = dir.path().join("u.lsef");
    write_field(&path, &g, &u).unwrap();
    let (g2, u2) = read_field(&path).unwrap();
    assert_eq!(g2, g);
    assert!(u
        .values()
        .iter()
        .zip(u2.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(read_header(&path).unwrap(), g);
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1, "temporary file left behind");
}

#[test]
fn corrupt_files_are_rejected() {
    let g = make_grid(2, 1.5, 5).unwrap();
    let u = Field::from_fn(g, |x| x[0] - x[1]).unwrap();
    let bytes = encode_field(&g, &u).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[4] = b'2';
    assert!(matches!(decode_field(&bad_magic), Err(Error::Format(m)) if m.contains("magic")));

    let short = &bytes[..bytes.len() - 8];
    assert!(matches!(decode_field(short), Err(Error::Format(m)) if m.contains("truncated")));

    let mut bad_dim = b"LSEF1\n4 5 1.5\n".to_vec();
    bad_dim.extend_from_slice(&bytes[14..]);
    assert!(decode_field(&bad_dim).is_err());
}

#[test]
fn run_reports_unwritable_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let mut spec = parse_config("dim=1\npoints=64\npotential=harmonic:2.0").unwrap();
    spec.output_dir = blocker.join("sub");
    let summary = run(&spec, true);
    let failure = summary.failure.as_ref().expect("must fail");
    assert_eq!(failure.stage, "io");
    assert!(failure.to_string().starts_with("FAIL io "));
    assert_eq!(summary.exit_code(), 1);
}

fn lse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lse"))
}

#[test]
fn cli_solve_verify_info() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "dim=1\nhalf_width=8\npoints=256\npotential=harmonic:2.0\nk_solutions=2\noutput_dir=ignored\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = lse()
        .args(["--quiet", "--output-dir"])
        .arg(&out_dir)
        .arg("solve")
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    for name in [
        "u_1.lsef",
        "u_2.lsef",
        "diagnostics.csv",
        "checks.csv",
        "energy_vs_lambda.dat",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let checks = fs::read_to_string(out_dir.join("checks.csv")).unwrap();
    let lines: Vec<&str> = checks.lines().collect();
    assert_eq!(lines[0], "j,check_name,margin,tolerance,pass");
    assert_eq!(lines.len(), 1 + 2 * 6);
    let diag = fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(
        diag.starts_with("j,lambda,energy,resid_precond,resid_raw,iters,mass,lambda_w1p_p,linf\n")
    );
    let plot = fs::read_to_string(out_dir.join("energy_vs_lambda.dat")).unwrap();
    assert!(plot
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .all(|l| l.split_whitespace().count() == 2));

    let verify = lse()
        .arg("verify")
        .arg(out_dir.join("u_1.lsef"))
        .arg(&config)
        .output()
        .unwrap();
    assert!(verify.status.success());
    assert_eq!(String::from_utf8(verify.stdout).unwrap().lines().count(), 7);

    let info = lse()
        .arg("info")
        .arg(out_dir.join("u_1.lsef"))
        .output()
        .unwrap();
    let text = String::from_utf8(info.stdout).unwrap();
    assert!(
        text.starts_with("LSEF1 dim=1 points=256 half_width=8"),
        "{text}"
    );
}

#[test]
fn cli_failures_end_with_fail_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    fs::write(&config, "dim=1\npoints=64\npotential=harmonic:2.0\np=2.0\n").unwrap();
    let out = lse().arg("solve").arg(&config).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.lines().last().unwrap().starts_with("FAIL config "),
        "{stderr}"
    );

    let out = lse()
        .arg("info")
        .arg(dir.path().join("missing.lsef"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.lines().last().unwrap().starts_with("FAIL io "),
        "{stderr}"
    );
}
