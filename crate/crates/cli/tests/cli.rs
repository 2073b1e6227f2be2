use grflab_cli::config::{evaluate, ExperimentConfig, Series};
use grflab_cli::{Check, RunReport};
use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn grflab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grflab"))
        .args(args)
        .current_dir(dir)
        .env_remove("GRFLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const FIXTURE: &str = r#"
mode = "grf"
[initial]
fixture = "bismut-flat"
[stepper]
scheme = "dp45"
t_end = 1.0
max_step = 0.05
[monitors]
scalar_residual = true
residual_tolerance = 1e-9
[[backward]]
energy = true
residual_tolerance = 1e-9
[output]
dir = "fixture-out"
"#;

#[test]
fn fixture_config_passes_and_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "fixture.toml", FIXTURE);
    let first = grflab(&["run", "fixture.toml"], tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let out = tmp.path().join("fixture-out");
    let a = std::fs::read(out.join("report.json")).unwrap();
    for f in ["trajectory.json", "extrema.csv", "timing.json", "backward0_extrema.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let second = grflab(&["run", "fixture.toml"], tmp.path());
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(a, std::fs::read(out.join("report.json")).unwrap());

    let report = RunReport::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
    assert!(report.all_pass);
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert!(names.contains(&"fixture_metric_drift") && names.contains(&"backward0_energy_residual"));

    let csv = std::fs::read_to_string(out.join("extrema.csv")).unwrap();
    assert!(csv.starts_with("t,max_scalar,min_scalar\n"));
    let traj = grflab::flow::Trajectory::from_json(&std::fs::read_to_string(out.join("trajectory.json")).unwrap()).unwrap();
    assert_eq!(traj.config_hash(), report.config_hash);

    let rep = grflab(&["report", "."], tmp.path());
    assert_eq!(rep.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("fixture_metric_drift"));
}

#[test]
fn cfl_violation_is_a_numerical_abort() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "cfl.toml",
        "mode = \"grf\"\n[backend]\nkind = \"cohom1-torus3\"\nresolution = 64\n[initial]\nperturbation = { amplitude = 0.1 }\n[stepper]\nt_end = 0.1\ndt = 0.01\n",
    );
    let out = grflab(&["run", "cfl.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let payload: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(payload["variant"], "StiffnessAbort");
    assert_eq!(payload["error"], "numerical");
    assert!(payload["t"].is_number());
}

#[test]
fn schema_violations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("typo.toml", FIXTURE.replace("scalar_residual", "scalar_residuals")),
        ("negative.toml", FIXTURE.replace("residual_tolerance = 1e-9\n[[backward]]", "residual_tolerance = -1.0\n[[backward]]")),
        ("empty.toml", "seed = 1\n".to_string()),
        ("kind.toml", "mode = \"grf\"\n[backend]\nkind = \"sphere\"\n[stepper]\nt_end = 1.0\n".to_string()),
        ("res.toml", "mode = \"grf\"\n[backend]\nkind = \"cohom1-torus3\"\nresolution = 15\n[stepper]\nt_end = 1.0\n".to_string()),
        ("ricci.toml", "mode = \"ricci\"\n[backend]\nkind = \"cohom1-torus3\"\n[initial]\ntorsion = 1.0\n[stepper]\nt_end = 1.0\n".to_string()),
    ];
    for (name, body) in &cases {
        write(tmp.path(), name, body);
        let out = grflab(&["run", name], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("\"config\""), "{name}");
    }
    assert_eq!(grflab(&["run", "missing.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(grflab(&["verify", "nonsense"], tmp.path()).status.code(), Some(2));
    assert_eq!(grflab(&["report", "."], tmp.path()).status.code(), Some(2));
    let threads = Command::new(env!("CARGO_BIN_EXE_grflab"))
        .args(["verify", "soliton"])
        .env("GRFLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn failing_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    // A residual tolerance below round-off cannot be met.
    write(tmp.path(), "tight.toml", &FIXTURE.replace("residual_tolerance = 1e-9\n[[backward]]", "residual_tolerance = 1e-300\n[[backward]]"));
    let out = grflab(&["run", "tight.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(grflab(&["report", "fixture-out"], tmp.path()).status.code(), Some(1));
}

#[test]
fn batch_runs_and_verify_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "a.toml", &FIXTURE.replace("fixture-out", "a"));
    write(
        tmp.path(),
        "b.toml",
        "[soliton]\nfixture = \"flat-torus\"\nresolution = 32\nperturbation = { modes = [{ k = [1], amp = 1.0 }] }\n[output]\ndir = \"b\"\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_grflab"))
        .args(["run", "a.toml", "b.toml"])
        .current_dir(tmp.path())
        .env("GRFLAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("b/soliton.csv").is_file());
    write(tmp.path(), "c.toml", &FIXTURE.replace("fixture-out", "a"));
    assert_eq!(grflab(&["run", "a.toml", "c.toml"], tmp.path()).status.code(), Some(2));

    let v = grflab(&["verify", "soliton", "--resolution", "32", "--out", "v"], tmp.path());
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stdout));
    let rep = RunReport::from_json(&std::fs::read_to_string(tmp.path().join("v/report.json")).unwrap()).unwrap();
    assert!(rep.checks.iter().any(|c| c.name == "flat_rate_error"));
    assert_eq!(grflab(&["report", "."], tmp.path()).status.code(), Some(0));
}

#[test]
fn config_hash_tracks_content() {
    let a = ExperimentConfig::from_toml(FIXTURE).unwrap();
    let b = ExperimentConfig::from_toml(&FIXTURE.replace("t_end = 1.0", "t_end = 0.5")).unwrap();
    assert_eq!(a.hash(), ExperimentConfig::from_toml(FIXTURE).unwrap().hash());
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn fourier_series_evaluation() {
    let b = grflab::geometry::Backend::new(grflab::geometry::BackendDescriptor::conformal_torus2(16)).unwrap();
    let s: Series = toml::from_str("mean = 0.5\nmodes = [{ k = [1, 2], amp = 0.3, phase = 0.1 }]").unwrap();
    let v = evaluate(&s, &b, 0.0).unwrap();
    let (x, y) = (b.coordinate(0), b.coordinate(1));
    for p in 0..256 {
        assert!((v[p] - 0.5 - 0.3 * (x[p] + 2.0 * y[p] + 0.1).cos()).abs() < 1e-15);
    }
    let bad: Series = toml::from_str("modes = [{ k = [1], amp = 0.3 }]").unwrap();
    assert!(evaluate(&bad, &b, 0.0).is_err());
}

#[test]
fn nonfinite_values_round_trip_as_null() {
    let r = RunReport::new("h".into(), vec![Check::at_most("x", f64::NAN, 1.0)]);
    assert!(!r.all_pass);
    let back = RunReport::from_json(&r.to_json()).unwrap();
    assert!(back.checks[0].value.is_nan());
    assert!(!RunReport::new("h".into(), Vec::new()).all_pass);
}

proptest! {
    #[test]
    fn pass_flags_are_monotone_under_loosening(value in -1e3f64..1e3, tol in -1e3f64..1e3, slack in 0.0f64..1e3) {
        if Check::at_most("c", value, tol).pass {
            prop_assert!(Check::at_most("c", value, tol + slack).pass);
        }
        if Check::at_least("c", value, tol).pass {
            prop_assert!(Check::at_least("c", value, tol - slack).pass);
        }
    }

    #[test]
    fn report_order_is_independent_of_check_order(names in proptest::collection::vec("[a-z]{1,6}", 1..8)) {
        let checks: Vec<Check> = names.iter().map(|n| Check::at_most(n.clone(), 0.0, 1.0)).collect();
        let mut rev = checks.clone();
        rev.reverse();
        prop_assert_eq!(RunReport::new("h".into(), checks).to_json(), RunReport::new("h".into(), rev).to_json());
    }
}
