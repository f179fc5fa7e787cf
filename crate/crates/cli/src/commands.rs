//! One function per subcommand. Each writes `sections/<name>.json` under the
//! output directory and then rebuilds `report.json` from all sections there.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ncs_core::analyzer::{
    build_stability_lmis_with, check_stability_with, max_delay_bound, synthesize_lyapunov, LyapunovCertificate,
    SystemBounds,
};
use ncs_core::fixtures::{format_matrix_text, BoundMatrices};
use ncs_core::lmi::{export_sdpa, DEFAULT_STRICTNESS_SHIFT};
use ncs_core::robot::{estimate_mk, verify_assumptions, MK_MARGIN};
use ncs_core::sim::{simulate_robot_seeds, ROBOT_STATE_NAMES};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Source, ToolkitConfig};
use crate::plot::{Chart, Series};
use crate::CliError;

pub const SECTIONS_DIR: &str = "sections";
pub const INPUTS_FILE: &str = "inputs.json";
pub const REPORT_FILE: &str = "report.json";
/// Most points drawn per trajectory in `error_norm.svg`.
const PLOT_POINTS: usize = 1000;

/// How a successful command ended.
#[derive(Debug, PartialEq)]
pub enum Outcome {
    Clean,
    /// Artifacts were written but the analysis found a problem.
    Finding(String),
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

/// Bound matrices as selected by `analysis.bounds_source` / `mk_source`,
/// plus the certificate when F, W, S were synthesized.
fn assemble(cfg: &ToolkitConfig) -> Result<(BoundMatrices, Option<LyapunovCertificate>), CliError> {
    let mut b = match cfg.fixture_dir() {
        Some(dir) => BoundMatrices::load_dir(&dir)?,
        None => BoundMatrices::reference(),
    };
    let mut cert = None;
    if cfg.analysis.bounds_source == Source::Synthesized {
        let c = synthesize_lyapunov(&cfg.robot.error_dynamics(), &cfg.solver)?;
        b.f = c.f();
        b.w = c.w();
        b.s = c.s();
        cert = Some(c);
    }
    if cfg.analysis.mk_source == Source::Estimate {
        b.m = estimate_mk(&cfg.robot, &cfg.domain()?, cfg.analysis.estimate_samples, cfg.seed)?;
    }
    Ok((b, cert))
}

fn analysis_bounds(cfg: &ToolkitConfig, b: &BoundMatrices) -> Result<SystemBounds, CliError> {
    let r = cfg.analysis.delays.clone().unwrap_or_else(|| vec![2.0 * cfg.analysis.control_cycle; b.m.len()]);
    Ok(SystemBounds::new(b.f.clone(), b.w.clone(), b.s.clone(), b.m.clone(), r)?)
}

fn sources(cfg: &ToolkitConfig) -> Value {
    json!({ "bounds_source": cfg.analysis.bounds_source, "mk_source": cfg.analysis.mk_source })
}

pub fn synth_lyapunov(cfg: &ToolkitConfig) -> Result<(Value, Outcome), CliError> {
    let c = synthesize_lyapunov(&cfg.robot.error_dynamics(), &cfg.solver)?;
    let violations = c.invariant_violations();
    let section = json!({
        "a": c.a, "p": c.p, "q": c.q, "alpha": c.alpha,
        "f": c.f(), "w": c.w(), "s": c.s(),
        "invariant_violations": violations,
    });
    let outcome = if violations.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Finding(format!("certificate invariants violated: {}", violations.join("; ")))
    };
    Ok((section, outcome))
}

pub fn estimate(cfg: &ToolkitConfig, out: &Path) -> Result<(Value, Outcome), CliError> {
    let domain = cfg.domain()?;
    let m = estimate_mk(&cfg.robot, &domain, cfg.analysis.estimate_samples, cfg.seed)?;
    for (k, mk) in m.iter().enumerate() {
        write_file(&out.join("mk").join(format!("M{}.txt", k + 1)), &format_matrix_text(mk))?;
    }
    let section = json!({
        "domain": domain,
        "samples": cfg.analysis.estimate_samples,
        "seed": cfg.seed,
        "margin": MK_MARGIN,
        "m": m,
        "reference": BoundMatrices::reference().m,
    });
    Ok((section, Outcome::Clean))
}

pub fn verify(cfg: &ToolkitConfig) -> Result<(Value, Outcome), CliError> {
    let (b, cert) = assemble(cfg)?;
    let bounds = analysis_bounds(cfg, &b)?;
    let p = cert.as_ref().map(|c| c.p.as_mat().clone());
    let report =
        verify_assumptions(&bounds, &cfg.robot, p.as_ref(), &cfg.domain()?, cfg.analysis.verify_samples, cfg.seed)?;
    let outcome = match report.total_violations() {
        0 => Outcome::Clean,
        n => {
            let failing: Vec<&str> = report.checks.iter().filter(|c| c.violations > 0).map(|c| c.name.as_str()).collect();
            Outcome::Finding(format!("{n} sampled violations in: {}", failing.join(", ")))
        }
    };
    Ok((json!({ "sources": sources(cfg), "delays": bounds.r(), "report": report }), outcome))
}

pub fn analyze(cfg: &ToolkitConfig) -> Result<(Value, Outcome), CliError> {
    let (b, _) = assemble(cfg)?;
    let bounds = analysis_bounds(cfg, &b)?;
    let v = check_stability_with(&bounds, cfg.analysis.coupling, &cfg.solver)?;
    let section = json!({
        "sources": sources(cfg),
        "coupling": cfg.analysis.coupling,
        "delays": bounds.r(),
        "m": bounds.m(),
        "status": v.status,
        "feasible": v.is_feasible(),
        "margin": v.margin,
        "slack_upper_bound": v.upper_bound,
        "iterations": v.iterations,
    });
    let outcome = if v.is_feasible() {
        Outcome::Clean
    } else {
        Outcome::Finding(format!("stability not certified: {:?}, margin {:e}", v.status, v.margin))
    };
    Ok((section, outcome))
}

pub fn bound(cfg: &ToolkitConfig, out: &Path) -> Result<(Value, Outcome), CliError> {
    let (b, _) = assemble(cfg)?;
    let a = &cfg.analysis;
    let res = max_delay_bound(|t| b.for_control_cycle(t), a.t_lo, a.t_hi, a.tolerance, a.coupling, &cfg.solver)?;

    let mut probes = res.probes.clone();
    probes.sort_by(|x, y| x.control_cycle.total_cmp(&y.control_cycle));
    let chart = Chart {
        title: "Stability margin vs control cycle",
        x_label: "T [ms]",
        y_label: "margin",
        log_y: false,
        baseline: Some(0.0),
    };
    let svg = chart.render(&[Series {
        label: format!("T* = {:.4} ms", res.t_star * 1e3),
        points: probes.iter().map(|p| (p.control_cycle * 1e3, p.margin)).collect(),
        markers: Some(probes.iter().map(|p| if p.feasible() { "#2ca02c" } else { "#d62728" }).collect()),
    }]);
    write_file(&out.join("margin_vs_T.svg"), &svg)?;

    let section = json!({
        "sources": sources(cfg),
        "coupling": a.coupling,
        "bracket": [a.t_lo, a.t_hi],
        "tolerance": res.tolerance,
        "t_star": res.t_star,
        "t_star_ms": res.t_star * 1e3,
        "monotone": res.is_monotone(),
        "m": b.m,
        "probes": res.probes,
    });
    Ok((section, Outcome::Clean))
}

pub fn simulate(cfg: &ToolkitConfig, out: &Path) -> Result<(Value, Outcome), CliError> {
    let scenario = cfg.scenario.network(cfg.seed);
    let runs =
        simulate_robot_seeds(&cfg.robot, &scenario, &cfg.seeds(), &cfg.simulation.x0, &cfg.simulation.integration())?;
    let eq = cfg.robot.equilibrium();
    write_file(&out.join("trajectory.csv"), &runs[0].trajectory.to_csv(&ROBOT_STATE_NAMES, &eq))?;

    let series: Vec<Series> = runs
        .iter()
        .map(|r| {
            let norms = r.trajectory.error_norms(&eq);
            let stride = norms.len().div_ceil(PLOT_POINTS).max(1);
            Series {
                label: format!("seed {}", r.seed),
                points: r.trajectory.times.iter().zip(&norms).step_by(stride).map(|(t, e)| (*t, *e)).collect(),
                markers: None,
            }
        })
        .collect();
    let chart = Chart {
        title: &format!("Tracking error, T = {} ms", scenario.control_cycle * 1e3),
        x_label: "t [s]",
        y_label: "|x - x_eq|",
        log_y: true,
        baseline: Some(ncs_core::sim::SETTLE_BAND),
    };
    write_file(&out.join("error_norm.svg"), &chart.render(&series))?;

    let unsettled: Vec<u64> = runs.iter().filter(|r| !r.metrics.settled).map(|r| r.seed).collect();
    let section = json!({
        "scenario": scenario,
        "delay_bound": scenario.delay_bound(),
        "x0": cfg.simulation.x0,
        "dt": cfg.simulation.dt,
        "runs": runs,
    });
    let outcome = if unsettled.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Finding(format!("runs did not settle for seeds {unsettled:?}"))
    };
    Ok((section, outcome))
}

pub fn export(cfg: &ToolkitConfig, out: &Path) -> Result<(Value, Outcome), CliError> {
    let (b, _) = assemble(cfg)?;
    let bounds = analysis_bounds(cfg, &b)?;
    let (problem, _) = build_stability_lmis_with(&bounds, cfg.analysis.coupling)?;
    let path = out.join("problem.dat-s");
    write_file(&path, &export_sdpa(&problem, DEFAULT_STRICTNESS_SHIFT))?;
    let section = json!({
        "file": "problem.dat-s",
        "scalars": problem.total_scalars(),
        "blocks": problem.constraints.iter().map(|c| json!({ "name": c.name, "dim": c.dim })).collect::<Vec<_>>(),
        "delays": bounds.r(),
        "strictness_shift": DEFAULT_STRICTNESS_SHIFT,
    });
    Ok((section, Outcome::Clean))
}

/// Stores one command's section and the inputs it ran with.
pub fn store_section(out: &Path, name: &str, section: &Value, cfg: &ToolkitConfig) -> Result<(), CliError> {
    write_file(&out.join(SECTIONS_DIR).join(format!("{name}.json")), &to_json(section))?;
    write_file(&out.join(INPUTS_FILE), &to_json(cfg))
}

/// Rebuilds `report.json` from the stored sections.
pub fn rebuild_report(out: &Path) -> Result<(), CliError> {
    let dir = out.join(SECTIONS_DIR);
    let mut sections = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(&dir) {
        for e in entries.flatten() {
            let path = e.path();
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if path.extension().is_some_and(|x| x == "json") {
                sections.insert(name.to_string(), read_json(&path)?);
            }
        }
    }
    if sections.is_empty() {
        return Err(CliError::Input(format!("no artifacts found in {}", out.display())));
    }
    let inputs = read_json(&out.join(INPUTS_FILE)).unwrap_or(Value::Null);
    write_file(&out.join(REPORT_FILE), &to_json(&json!({ "inputs": inputs, "sections": sections })))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{} is not valid JSON: {e}", path.display())))
}
