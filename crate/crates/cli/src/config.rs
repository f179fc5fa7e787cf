//! Strict JSON configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use ncs_core::analyzer::CouplingForm;
use ncs_core::field::StateDomain;
use ncs_core::robot::RobotParams;
use ncs_core::sdp::SolverConfig;
use ncs_core::sim::{IntegrationOptions, NetworkScenario};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Key reference printed by `ncs --help`.
pub const CONFIG_HELP: &str = "\
CONFIGURATION (JSON, unknown keys rejected; defaults in brackets)
  robot.m1, m2, a1, a2, g, alpha1, alpha2, beta1, beta2   required
  robot.qd1, qd2                 joint setpoints, rad [0]
  robot.n2_form                  simplified | coriolis [simplified]
  domain.position                half-width of the joint-angle box, rad [0.5]
  domain.velocity                half-width of the joint-rate box, rad/s [0.5]
  solver.max_iterations          Newton step budget [20000]
  solver.margin_tolerance        verdict dead band [1e-7]
  solver.variable_bound          box on every LMI scalar [1e6]
  solver.seed                    recorded only [42]
  analysis.bounds_source         fixture | synthesized (F, W, S) [fixture]
  analysis.mk_source             fixture | estimate [fixture]
  analysis.fixture_dir           directory with F.txt W.txt S.txt M1..M4.txt,
                                 relative to the config file [bundled matrices]
  analysis.control_cycle         T for analyze/export-sdpa, s [0.00079]
  analysis.delays                explicit r_1..r_4, s [2T each]
  analysis.t_lo, t_hi            bisection bracket, s [0.0001, 0.005]
  analysis.tolerance             bisection tolerance, s [1e-5]
  analysis.coupling              transpose_w | plain_w [transpose_w]
  analysis.estimate_samples      random secants per (channel, coordinate) [20000]
  analysis.verify_samples        random points per audited inequality [20000]
  scenario.control_cycle         simulated T, s [0.0005]
  scenario.transmission_delay_max, sampling_bound_h   s [T/5 each]
  scenario.max_successive_losses [0]
  scenario.loss_probability      in [0, 1] [0]
  scenario.horizon               simulated time, s [20]
  scenario.delay_cap             reject scenarios with larger delays, s [none]
  simulation.runs                seeds seed..seed+runs-1 [10]
  simulation.x0                  initial state [0.3, 0, 0.3, 0]
  simulation.dt, record_stride   RK4 step, s / rows per sample [1e-5, 100]
  seed                           base seed for sampling and delays [1]
  output_dir                     relative to the config file [ncs-out]";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Fixture,
    Synthesized,
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub position: f64,
    pub velocity: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { position: 0.5, velocity: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub bounds_source: Source,
    pub mk_source: Source,
    pub fixture_dir: Option<PathBuf>,
    pub control_cycle: f64,
    pub delays: Option<Vec<f64>>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub tolerance: f64,
    pub coupling: CouplingForm,
    pub estimate_samples: usize,
    pub verify_samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bounds_source: Source::Fixture,
            mk_source: Source::Fixture,
            fixture_dir: None,
            control_cycle: 0.79e-3,
            delays: None,
            t_lo: 1e-4,
            t_hi: 5e-3,
            tolerance: 1e-5,
            coupling: CouplingForm::TransposeW,
            estimate_samples: 20_000,
            verify_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub control_cycle: f64,
    pub transmission_delay_max: Option<f64>,
    pub sampling_bound_h: Option<f64>,
    pub max_successive_losses: u32,
    pub loss_probability: f64,
    pub horizon: f64,
    pub delay_cap: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            control_cycle: 0.5e-3,
            transmission_delay_max: None,
            sampling_bound_h: None,
            max_successive_losses: 0,
            loss_probability: 0.0,
            horizon: 20.0,
            delay_cap: None,
        }
    }
}

impl ScenarioConfig {
    pub fn network(&self, seed: u64) -> NetworkScenario {
        let base = NetworkScenario::lossless(self.control_cycle, seed);
        NetworkScenario {
            transmission_delay_max: self.transmission_delay_max.unwrap_or(base.transmission_delay_max),
            sampling_bound_h: self.sampling_bound_h.unwrap_or(base.sampling_bound_h),
            max_successive_losses: self.max_successive_losses,
            loss_probability: self.loss_probability,
            horizon: self.horizon,
            delay_cap: self.delay_cap,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub runs: usize,
    pub x0: [f64; 4],
    pub dt: f64,
    pub record_stride: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let o = IntegrationOptions::default();
        Self { runs: 10, x0: [0.3, 0.0, 0.3, 0.0], dt: o.dt, record_stride: o.record_stride }
    }
}

impl SimulationConfig {
    pub fn integration(&self) -> IntegrationOptions {
        IntegrationOptions { dt: self.dt, record_stride: self.record_stride, ..Default::default() }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ncs-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub robot: RobotParams,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// `output_dir` resolved against the config file, or `--out`.
    #[serde(skip)]
    pub resolved_output: PathBuf,
    #[serde(skip)]
    pub config_dir: PathBuf,
}

impl ToolkitConfig {
    pub fn domain(&self) -> Result<StateDomain, CliError> {
        let d = &self.domain;
        if !(d.position > 0.0 && d.velocity > 0.0) || !d.position.is_finite() || !d.velocity.is_finite() {
            return Err(CliError::Input("domain.position and domain.velocity must be positive and finite".into()));
        }
        Ok(self.robot.domain(d.position, d.velocity)?)
    }

    /// `analysis.fixture_dir` resolved against the config file.
    pub fn fixture_dir(&self) -> Option<PathBuf> {
        self.analysis.fixture_dir.as_ref().map(|d| self.config_dir.join(d))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.simulation.runs as u64).map(|i| self.seed + i).collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        self.robot.validate()?;
        self.solver.validate()?;
        self.domain()?;
        let a = &self.analysis;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(a.control_cycle) {
            return Err(CliError::Input(format!("analysis.control_cycle must be positive, got {}", a.control_cycle)));
        }
        if !(positive(a.t_lo) && positive(a.t_hi) && a.t_lo < a.t_hi) {
            return Err(CliError::Input(format!("analysis.t_lo < analysis.t_hi required, got [{}, {}]", a.t_lo, a.t_hi)));
        }
        if !positive(a.tolerance) {
            return Err(CliError::Input("analysis.tolerance must be positive".into()));
        }
        if a.bounds_source == Source::Estimate {
            return Err(CliError::Input("analysis.bounds_source must be fixture or synthesized".into()));
        }
        if a.mk_source == Source::Synthesized {
            return Err(CliError::Input("analysis.mk_source must be fixture or estimate".into()));
        }
        if let Some(r) = &a.delays {
            if r.len() != 4 || r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(CliError::Input("analysis.delays must hold four finite values >= 0".into()));
            }
        }
        if let Some(dir) = self.fixture_dir() {
            for name in ["F", "W", "S", "M1", "M2", "M3", "M4"] {
                let f = dir.join(format!("{name}.txt"));
                if !f.is_file() {
                    return Err(CliError::Input(format!("analysis.fixture_dir: missing {}", f.display())));
                }
            }
        }
        if a.estimate_samples == 0 || a.verify_samples == 0 {
            return Err(CliError::Input("analysis.estimate_samples and verify_samples must be at least 1".into()));
        }
        self.scenario.network(self.seed).validate()?;
        let s = &self.simulation;
        if s.runs == 0 {
            return Err(CliError::Input("simulation.runs must be at least 1".into()));
        }
        if !positive(s.dt) || s.record_stride == 0 {
            return Err(CliError::Input("simulation.dt must be positive and simulation.record_stride at least 1".into()));
        }
        if s.x0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Input("simulation.x0 must be finite".into()));
        }
        Ok(())
    }
}

/// Sets `key` (dotted path) in `root` to `raw`, read as JSON when it parses
/// and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Input(format!("override key `{key}` is malformed")));
    }
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(CliError::Input(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn decode(value: Value) -> Result<ToolkitConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // missing fields are reported against their parent table
        let key = match inner.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        CliError::Input(format!("config key `{key}`: {inner}"))
    })
}

/// Reads, overrides and validates a configuration file. Relative paths in
/// the file resolve against its directory.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ToolkitConfig, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("config {} is not valid JSON: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg = decode(value)?;
    cfg.config_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    cfg.resolved_output = cfg.config_dir.join(&cfg.output_dir);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({ "robot": serde_json::to_value(RobotParams::reference()).unwrap() })
    }

    #[test]
    fn defaults_fill_missing_tables() {
        let cfg = decode(minimal()).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.analysis.tolerance, 1e-5);
        assert_eq!(cfg.seeds(), (1..=10).collect::<Vec<_>>());
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_mass_names_the_key() {
        let mut v = minimal();
        v["robot"].as_object_mut().unwrap().remove("m1");
        let err = decode(v).unwrap_err().to_string();
        assert!(err.contains("robot.m1"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut v = minimal();
        v["analysis"] = json!({ "tolerence": 1e-5 });
        let err = decode(v).unwrap_err().to_string();
        assert!(err.contains("analysis.tolerence") || err.contains("tolerence"), "{err}");
    }

    #[test]
    fn overrides_parse_json_and_create_tables() {
        let mut v = minimal();
        apply_override(&mut v, "analysis.delays=[0,0,0,0]").unwrap();
        apply_override(&mut v, "analysis.mk_source=estimate").unwrap();
        apply_override(&mut v, "robot.m1=2.5").unwrap();
        let cfg = decode(v).unwrap();
        assert_eq!(cfg.analysis.delays, Some(vec![0.0; 4]));
        assert_eq!(cfg.analysis.mk_source, Source::Estimate);
        assert_eq!(cfg.robot.m1, 2.5);
    }

    #[test]
    fn malformed_overrides() {
        let mut v = minimal();
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "robot..m1=1").is_err());
        assert!(apply_override(&mut v, "robot.m1.x=1").is_err());
    }

    #[test]
    fn range_errors_name_the_field() {
        let mut v = minimal();
        apply_override(&mut v, "scenario.loss_probability=1.5").unwrap();
        let err = decode(v).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("loss_probability"), "{err}");
    }
}
