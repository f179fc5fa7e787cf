use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/robot_paper.cfg")
}

fn ncs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncs")).args(args).env("NCS_LOG", "error").output().expect("binary runs")
}

fn run(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let config = shipped_config();
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ncs(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn section(out: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(out.join("sections").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Writes the shipped config with `edit` applied to its JSON tree.
fn edited_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(shipped_config()).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("edited.cfg");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn export_of_shipped_config_matches_reviewed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("export-sdpa", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ours = std::fs::read_to_string(dir.path().join("problem.dat-s")).unwrap();
    let fixture = include_str!("../../core/fixtures/robot_t0.79ms.dat-s");
    assert_eq!(ours, fixture);
    assert_eq!(section(dir.path(), "export-sdpa")["scalars"], 168);
}

#[test]
fn zero_delay_analysis_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("analyze", dir.path(), &["--override", "analysis.delays=[0,0,0,0]"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = section(dir.path(), "analyze");
    assert_eq!(s["feasible"], true);
    assert_eq!(s["delays"], serde_json::json!([0.0, 0.0, 0.0, 0.0]));
}

#[test]
fn long_cycle_analysis_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("analyze", dir.path(), &["--override", "analysis.control_cycle=0.0009"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not certified"));
    assert_eq!(section(dir.path(), "analyze")["feasible"], false);
}

#[test]
fn report_without_artifacts_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncs(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no artifacts found"));
}

#[test]
fn report_collects_every_section() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("synth-lyapunov", dir.path(), &[]).status.code(), Some(0));
    assert_eq!(run("export-sdpa", dir.path(), &[]).status.code(), Some(0));
    std::fs::remove_file(dir.path().join("report.json")).unwrap();
    let o = ncs(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let sections = report["sections"].as_object().unwrap();
    assert_eq!(sections.keys().collect::<Vec<_>>(), ["export-sdpa", "synth-lyapunov"]);
    assert_eq!(report["inputs"]["robot"]["m1"], 1.5);
}

#[test]
fn missing_mass_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |v| {
        v["robot"].as_object_mut().unwrap().remove("m1");
    });
    let o = ncs(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("robot.m1"), "{}", stderr(&o));
}

#[test]
fn out_of_range_loss_probability_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", dir.path(), &["--override", "scenario.loss_probability=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario.loss_probability"), "{}", stderr(&o));
}

#[test]
fn misspelled_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |v| {
        v["analysis"]["tolerence"] = 1e-5.into();
    });
    let o = ncs(&["bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("analysis.tolerence"), "{}", stderr(&o));
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ncs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ncs(&["analyze"]).status.code(), Some(2));
    assert_eq!(ncs(&["analyze", "--config", "/nonexistent.cfg"]).status.code(), Some(2));
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(ncs(&["analyze", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run("analyze", dir.path(), &["--override", "noequals"]).status.code(), Some(2));
    assert_eq!(run("analyze", dir.path(), &["--override", "analysis.fixture_dir=nowhere"]).status.code(), Some(2));
    // already certified upper bracket
    let o = run("bound", dir.path(), &["--override", "analysis.t_hi=0.0002"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("already certified"));
}

#[test]
fn help_documents_defaults() {
    let o = ncs(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["robot.m1", "analysis.tolerance", "scenario.loss_probability", "simulation.runs", "output_dir"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn synth_lyapunov_reports_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("synth-lyapunov", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = section(dir.path(), "synth-lyapunov");
    let alpha = s["alpha"].as_f64().unwrap();
    assert!((0.78..=0.83).contains(&alpha));
    assert!(s["invariant_violations"].as_array().unwrap().is_empty());
}

#[test]
fn non_hurwitz_gains_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("synth-lyapunov", dir.path(), &["--override", "robot.alpha1=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_flags_rounded_decrease_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("verify-assumptions", dir.path(), &["--override", "analysis.verify_samples=2000"]);
    let s = section(dir.path(), "verify-assumptions");
    let checks = s["report"]["checks"].as_array().unwrap();
    let violations = |name: &str| checks.iter().find(|c| c["name"] == name).unwrap()["violations"].as_u64().unwrap();
    assert_eq!(violations("growth"), 0);
    assert_eq!(violations("gradient"), 0);
    let total: u64 = checks.iter().map(|c| c["violations"].as_u64().unwrap()).sum();
    assert_eq!(o.status.code(), Some(if total == 0 { 0 } else { 1 }));
}

#[test]
fn estimate_writes_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("estimate-mk", dir.path(), &["--override", "analysis.estimate_samples=500", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for k in 1..=4 {
        let text = std::fs::read_to_string(dir.path().join("mk").join(format!("M{k}.txt"))).unwrap();
        assert_eq!(text.lines().count(), 4);
    }
    assert_eq!(section(dir.path(), "estimate-mk")["seed"], 9);
}

#[test]
fn estimated_bounds_feed_the_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "analyze",
        dir.path(),
        &["--override", "analysis.mk_source=estimate", "--override", "analysis.estimate_samples=500", "--override", "analysis.control_cycle=0.0001"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn short_simulation_writes_trajectory_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", dir.path(), &["--override", "simulation.runs=1", "--override", "scenario.horizon=7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,q1,dq1,q2,dq2,d1,d2,d3,d4,err_norm");
    assert!(std::fs::read_to_string(dir.path().join("error_norm.svg")).unwrap().starts_with("<svg"));
    assert_eq!(section(dir.path(), "simulate")["runs"][0]["metrics"]["settled"], true);
}

#[test]
fn unsettled_simulation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", dir.path(), &["--override", "simulation.runs=1", "--override", "scenario.horizon=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("did not settle"));
}

#[test]
fn narrow_bound_search_plots_probes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "bound",
        dir.path(),
        &["--override", "analysis.t_lo=0.0007", "--override", "analysis.t_hi=0.0009", "--override", "analysis.tolerance=0.00005"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = section(dir.path(), "bound");
    let t = s["t_star"].as_f64().unwrap();
    assert!((0.75e-3..=0.84e-3).contains(&t), "{t}");
    assert_eq!(s["monotone"], true);
    let svg = std::fs::read_to_string(dir.path().join("margin_vs_T.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), s["probes"].as_array().unwrap().len());
}
