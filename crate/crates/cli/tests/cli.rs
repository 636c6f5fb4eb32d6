use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use magsync::io::{CsvTable, Document};
use serde_json::Value;

fn magsync(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magsync")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = magsync(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn doc(path: &Path) -> Document<Value> {
    Document::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every CSV and JSON file in `dir` parses and carries the same config hash.
fn check_outputs(dir: &Path) -> String {
    let hash = doc(&dir.join("config.json")).config_hash;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let t = CsvTable::read(&path).unwrap();
                assert_eq!(t.meta_value("config_hash"), Some(hash.as_str()), "{}", path.display());
                for c in &t.columns {
                    if c != "kind" {
                        t.floats(c).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                    }
                }
            }
            Some("json") => assert_eq!(doc(&path).config_hash, hash, "{}", path.display()),
            _ => {}
        }
    }
    hash
}

#[test]
fn constraint_reports_roots_and_optimum() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["constraint"]);
    check_outputs(dir.path());
    let d = doc(&dir.path().join("constraint.json")).data;
    let roots: Vec<f64> = serde_json::from_value(d["roots_at_zero"].clone()).unwrap();
    assert_eq!(roots.len(), 2);
    assert!((roots[0] - 1.2).abs() < 1e-12 && (roots[1] - 1.8).abs() < 1e-12, "{roots:?}");
    assert!((d["P_pi_opt"].as_f64().unwrap() + 0.9999877).abs() < 1e-7);
}

#[test]
fn undriven_zero_start_stays_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--set",
            "params.drive.amplitude=0",
            "--set",
            "integration.initial=zero",
            "--set",
            "integration.desk_scale=100",
        ],
    );
    check_outputs(dir.path());
    let t = CsvTable::read(&dir.path().join("trajectory.csv")).unwrap();
    assert!(t.rows.len() > 100);
    for c in t.columns.iter().skip(1) {
        assert!(t.floats(c).unwrap().iter().all(|v| *v == Some(0.0)), "{c}");
    }
}

#[test]
fn undriven_thermal_start_decays() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--set", "params.drive.amplitude=0", "--set", "integration.desk_scale=100"]);
    let t = CsvTable::read(&dir.path().join("sync_observables.csv")).unwrap();
    let i1: Vec<f64> = t.floats("I1").unwrap().into_iter().map(Option::unwrap).collect();
    assert!(i1.last().unwrap() < &(1e-6 * i1[0]), "{} -> {}", i1[0], i1.last().unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["modulate", "--seed", "3", "--set", "sideband.count=60"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    check_outputs(a.path());
    for name in ["config.json", "fs_locus.csv", "f_curve.csv", "intersections.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_file_and_overrides_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"operating_point": "ii", "sideband": {"count": 20}}"#).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["sideband", "--config", cfg.to_str().unwrap()]);
    ok(&b, &["sideband", "--set", "operating_point=ii", "--set", "sideband.count=20"]);
    assert_eq!(check_outputs(&a), check_outputs(&b));
    assert_eq!(fs::read(a.join("f_curve.csv")).unwrap(), fs::read(b.join("f_curve.csv")).unwrap());
}

#[test]
fn exit_codes_separate_bad_input_from_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| magsync(dir.path(), args).status.code();
    assert_eq!(code(&["constraint", "--set", "params.g_mb=1"]), Some(2));
    assert_eq!(code(&["constraint", "--set", "params.gamma_1=-1"]), Some(2));
    assert_eq!(code(&["constraint", "--config", "/nonexistent/run.json"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    // the run succeeds but 10 trajectories are too few for statistics
    assert_eq!(code(&["ensemble", "--set", "ensemble.n_trajectories=10", "--set", "ensemble.horizon=1"]), Some(3));
}

#[test]
fn stability_report_lists_fixed_points() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["stability", "--set", "operating_point=ii"]);
    check_outputs(dir.path());
    let d = doc(&dir.path().join("fixed_points.json")).data;
    assert!(!d["points"].as_array().unwrap().is_empty());
    assert_eq!(d["any_stable"], Value::Bool(false));
}

#[test]
fn ensemble_writes_normalized_histograms() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["ensemble", "--set", "ensemble.n_trajectories=100", "--set", "ensemble.horizon=5", "--threads", "2"],
    );
    check_outputs(dir.path());
    let t = CsvTable::read(&dir.path().join("histograms.csv")).unwrap();
    let w: f64 = t.meta_value("bin_width").unwrap().parse().unwrap();
    for c in ["density_theta_1", "density_theta_minus"] {
        let total: f64 = t.floats(c).unwrap().iter().map(|v| v.unwrap() * w).sum();
        assert!((total - 1.0).abs() < 1e-12, "{c}: {total}");
    }
    assert_eq!(CsvTable::read(&dir.path().join("ensemble_phases.csv")).unwrap().rows.len(), 100);
}

/// Full-scale 2×2 diagram spanning the zero-phase and π-phase operating points.
#[test]
fn full_scale_diagram_around_cases_i_and_ii() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "diagram",
        "--seed",
        "7",
        "--set",
        r#"grid.x_axis={"parameter":"Omega","scale":"log10","min":-0.8,"max":-0.4,"count":2}"#,
        "--set",
        r#"grid.y_axis={"parameter":"g_ma","scale":"linear","min":0.78,"max":0.82,"count":2}"#,
        "--set",
        "grid.desk_scale=1",
    ];
    ok(dir.path(), &args);
    check_outputs(dir.path());
    let csv = fs::read(dir.path().join("diagram.csv")).unwrap();
    let t = CsvTable::parse(std::str::from_utf8(&csv).unwrap()).unwrap();
    let (x, p) = (t.floats("x").unwrap(), t.floats("P").unwrap());
    for (x, p) in x.iter().zip(&p) {
        let (x, p) = (x.unwrap(), p.expect("pixel completed"));
        let want = if x > -0.6 { 1.0 } else { -1.0 };
        assert!(p * want > 0.9, "log10 Ω = {x}: P = {p}");
    }
    // a rerun resumes from the checkpoint and reproduces the file
    ok(dir.path(), &args);
    assert_eq!(fs::read(dir.path().join("diagram.csv")).unwrap(), csv);
}
