//! Two-link planar manipulator under feedback-linearising control with the
//! four sensor/actuator delay channels of a networked loop.
//!
//! Dynamics `M(q₂) q̈ − N(q, q̇) = τ`, state `x = [q₁, q̇₁, q₂, q̇₂]`. The
//! controller cancels `N` and imposes `q̈ᵢ = −αᵢ q̇ᵢ − βᵢ (qᵢ − q_dᵢ)`. Channel
//! mapping (sensor, actuator): 1 → (1, 1), 2 → (1, 2), 3 → (2, 1), 4 → (2, 2);
//! actuator 1 computes `τ₁` from joint-1 data of channel 1 and joint-2 data
//! of channel 3, actuator 2 computes `τ₂` from channels 2 and 4.

use serde::{Deserialize, Serialize};

use crate::analyzer::SystemBounds;
use crate::error::{invalid, Error, Result};
use crate::field::{estimate_bounds, verify_bounds, AssumptionReport, DelayedField, StateDomain};
use crate::matrix::{Mat, SymMat};

pub type State = [f64; 4];

/// Which velocity term enters the second bias component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum N2Form {
    /// `m₂a₁a₂ q̇₁ sin q₂` (default).
    #[default]
    Simplified,
    /// `m₂a₁a₂ q̇₁² sin q₂` (Coriolis/centrifugal form).
    Coriolis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    pub m1: f64,
    pub m2: f64,
    pub a1: f64,
    pub a2: f64,
    pub g: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default)]
    pub qd1: f64,
    #[serde(default)]
    pub qd2: f64,
    #[serde(default)]
    pub n2_form: N2Form,
}

impl RobotParams {
    /// The reference arm with `α = 2.55`, `β = 3.16` and zero setpoints.
    pub fn reference() -> Self {
        Self {
            m1: 1.5,
            m2: 0.8,
            a1: 0.5,
            a2: 0.4,
            g: 9.8,
            alpha1: 2.55,
            alpha2: 2.55,
            beta1: 3.16,
            beta2: 3.16,
            qd1: 0.0,
            qd2: 0.0,
            n2_form: N2Form::Simplified,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("a1", self.a1),
            ("a2", self.a2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("robot.{name} must be a positive finite number, got {v}")));
            }
        }
        for (name, v) in [("g", self.g), ("qd1", self.qd1), ("qd2", self.qd2)] {
            if !v.is_finite() {
                return Err(invalid(format!("robot.{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn equilibrium(&self) -> State {
        [self.qd1, 0.0, self.qd2, 0.0]
    }

    /// Closed-loop error dynamics `ė = A e` (block companion form).
    pub fn error_dynamics(&self) -> Mat {
        Mat::from_rows(&[
            [0.0, 1.0, 0.0, 0.0],
            [-self.beta1, -self.alpha1, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, -self.beta2, -self.alpha2],
        ])
        .expect("4x4 literal")
    }

    /// `±position` rad and `±velocity` rad/s around the equilibrium.
    pub fn domain(&self, position: f64, velocity: f64) -> Result<StateDomain> {
        StateDomain::around(&self.equilibrium(), &[position, velocity, position, velocity])
    }

    /// The default operating region, ±0.5 rad and ±0.5 rad/s.
    pub fn default_domain(&self) -> StateDomain {
        self.domain(0.5, 0.5).expect("positive half widths")
    }
}

/// `(M₁₁, M₁₂, M₂₂)` at `q₂`.
fn inertia_entries(p: &RobotParams, q2: f64) -> (f64, f64, f64) {
    let c = q2.cos();
    let m11 = (p.m1 + p.m2) * p.a1 * p.a1 + p.m2 * p.a2 * p.a2 + 2.0 * p.m2 * p.a1 * p.a2 * c;
    let m12 = p.m2 * p.a2 * (p.a2 + p.a1 * c);
    let m22 = p.m2 * p.a2 * p.a2;
    (m11, m12, m22)
}

pub fn inertia_matrix(p: &RobotParams, q2: f64) -> SymMat {
    let (m11, m12, m22) = inertia_entries(p, q2);
    SymMat::new(Mat::from_rows(&[[m11, m12], [m12, m22]]).expect("2x2 literal")).expect("symmetric by construction")
}

/// `[N₁, N₂]` from joint-1 variables `(q₁, q̇₁)` and joint-2 variables `(q₂, q̇₂)`.
fn bias_split(p: &RobotParams, q1: f64, dq1: f64, q2: f64, dq2: f64) -> [f64; 2] {
    let k = p.m2 * p.a1 * p.a2;
    let s2 = q2.sin();
    let g12 = p.m2 * p.g * p.a2 * (q1 + q2).cos();
    let n1 = -k * (2.0 * dq1 * dq2 + dq2 * dq2) * s2 + (p.m1 + p.m2) * p.g * p.a1 * q1.cos() + g12;
    let vel = match p.n2_form {
        N2Form::Simplified => dq1,
        N2Form::Coriolis => dq1 * dq1,
    };
    [n1, k * vel * s2 + g12]
}

pub fn bias_terms(p: &RobotParams, x: &State) -> [f64; 2] {
    bias_split(p, x[0], x[1], x[2], x[3])
}

/// Torques from the four delayed states, `delayed[c]` being channel `c + 1`.
pub fn control_torques(p: &RobotParams, delayed: [&[f64]; 4]) -> [f64; 2] {
    let v1 = |s: &[f64]| p.alpha1 * s[1] + p.beta1 * (s[0] - p.qd1);
    let v2 = |s: &[f64]| p.alpha2 * s[3] + p.beta2 * (s[2] - p.qd2);
    let [d1, d2, d3, d4] = delayed;

    let (m11, m12, _) = inertia_entries(p, d3[2]);
    let tau1 = -m11 * v1(d1) - m12 * v2(d3) - bias_split(p, d1[0], d1[1], d3[2], d3[3])[0];

    let (_, m12, m22) = inertia_entries(p, d4[2]);
    let tau2 = -m12 * v1(d2) - m22 * v2(d4) - bias_split(p, d2[0], d2[1], d4[2], d4[3])[1];
    [tau1, tau2]
}

/// `ẋ` of the networked closed loop: current-state inertia and bias,
/// torques from the delayed states.
pub fn closed_loop_f(p: &RobotParams, x: &[f64], delayed: [&[f64]; 4]) -> Result<State> {
    let tau = control_torques(p, delayed);
    let n = bias_split(p, x[0], x[1], x[2], x[3]);
    let (m11, m12, m22) = inertia_entries(p, x[2]);
    let det = m11 * m22 - m12 * m12;
    if !(det.abs() > 1e-12 * (m11 * m22).abs()) {
        return Err(Error::Numeric(format!("inertia matrix singular at q2 = {}", x[2])));
    }
    let (r1, r2) = (tau[0] + n[0], tau[1] + n[1]);
    let ddq1 = (m22 * r1 - m12 * r2) / det;
    let ddq2 = (m11 * r2 - m12 * r1) / det;
    Ok([x[1], ddq1, x[3], ddq2])
}

/// The closed loop as a [`DelayedField`] with four channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotField(pub RobotParams);

impl DelayedField for RobotField {
    fn dim(&self) -> usize {
        4
    }

    fn channels(&self) -> usize {
        4
    }

    fn eval(&self, _t: f64, x: &[f64], delayed: &[&[f64]], out: &mut [f64]) -> Result<()> {
        let d: [&[f64]; 4] = delayed
            .try_into()
            .map_err(|_| Error::Dimension(format!("robot field needs 4 delayed states, got {}", delayed.len())))?;
        out[..4].copy_from_slice(&closed_loop_f(&self.0, x, d)?);
        Ok(())
    }
}

/// `true` where `M_k` may be nonzero: rows 2 and 4, joint-1 columns for
/// channels 1 and 2, joint-2 columns for channels 3 and 4.
pub fn mk_structure(k: usize, i: usize, j: usize) -> bool {
    let joint1 = j < 2;
    (i == 1 || i == 3) && (if k <= 2 { joint1 } else { !joint1 })
}

/// Default margin applied to sampled ratio suprema.
pub const MK_MARGIN: f64 = 1.05;

/// Sampling estimate of `M₁..M₄` on `domain` with the structural zero pattern.
pub fn estimate_mk(p: &RobotParams, domain: &StateDomain, samples: usize, seed: u64) -> Result<Vec<Mat>> {
    p.validate()?;
    let raw = estimate_bounds(&RobotField(*p), domain, samples, seed, MK_MARGIN)?;
    raw.into_iter()
        .enumerate()
        .map(|(k, m)| {
            let rows: Vec<Vec<f64>> = m
                .to_rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.into_iter().enumerate().map(|(j, v)| if mk_structure(k + 1, i, j) { v } else { 0.0 }).collect())
                .collect();
            Mat::from_rows(&rows)
        })
        .collect()
}

/// Audits `bounds` against the robot on `domain`; see [`verify_bounds`].
pub fn verify_assumptions(
    bounds: &SystemBounds,
    p: &RobotParams,
    lyapunov_p: Option<&Mat>,
    domain: &StateDomain,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    p.validate()?;
    verify_bounds(&RobotField(*p), &p.equilibrium(), bounds, lyapunov_p, domain, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn inertia_examples() {
        let p = RobotParams::reference();
        let m = inertia_matrix(&p, 0.0);
        assert_abs_diff_eq!(m.get(0, 0), 1.023, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), 0.288, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(1, 1), 0.128, epsilon = 1e-12);
        let m = inertia_matrix(&p, FRAC_PI_2);
        assert_abs_diff_eq!(m.get(0, 0), 0.703, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), 0.128, epsilon = 1e-12);
        for q2 in [-3.0, -1.0, 0.4, 2.5] {
            assert_abs_diff_eq!(inertia_matrix(&p, q2).get(1, 1), 0.128, epsilon = 1e-15);
        }
    }

    #[test]
    fn bias_examples() {
        let p = RobotParams::reference();
        let n = bias_terms(&p, &[0.0; 4]);
        assert_abs_diff_eq!(n[0], 14.406, epsilon = 1e-12);
        assert_abs_diff_eq!(n[1], 3.136, epsilon = 1e-12);
        let n = bias_terms(&p, &[FRAC_PI_2, 0.0, 0.0, 0.0]);
        assert!(n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
        // sin q2 = 0: velocity terms vanish
        let a = bias_terms(&p, &[0.3, 1.7, 0.0, -2.2]);
        let b = bias_terms(&p, &[0.3, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
    }

    #[test]
    fn n2_forms_differ_only_in_velocity_power() {
        let mut p = RobotParams::reference();
        let x = [0.1, 2.0, 0.7, 0.0];
        let simplified = bias_terms(&p, &x)[1];
        p.n2_form = N2Form::Coriolis;
        let coriolis = bias_terms(&p, &x)[1];
        let k = 0.8 * 0.5 * 0.4 * 0.7f64.sin();
        assert_abs_diff_eq!(coriolis - simplified, k * (4.0 - 2.0), epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_torque_holds_the_arm() {
        let mut p = RobotParams::reference();
        p.qd1 = 0.4;
        p.qd2 = -0.2;
        let eq = p.equilibrium();
        let tau = control_torques(&p, [&eq, &eq, &eq, &eq]);
        let n = bias_terms(&p, &eq);
        assert_abs_diff_eq!(tau[0], -n[0], epsilon = 1e-12);
        assert_abs_diff_eq!(tau[1], -n[1], epsilon = 1e-12);
        assert_eq!(closed_loop_f(&p, &eq, [&eq, &eq, &eq, &eq]).unwrap(), [0.0; 4]);
    }

    #[test]
    fn velocity_rows_ignore_delays() {
        let p = RobotParams::reference();
        let x = [0.1, -0.3, 0.2, 0.25];
        let d = [0.5, 0.5, -0.5, 0.4];
        let f = closed_loop_f(&p, &x, [&d, &x, &d, &x]).unwrap();
        assert_eq!(f[0], x[1]);
        assert_eq!(f[2], x[3]);
    }

    #[test]
    fn structure_pattern() {
        let nonzero: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| mk_structure(1, i, j)).collect();
        assert_eq!(nonzero, vec![(1, 0), (1, 1), (3, 0), (3, 1)]);
        assert!(mk_structure(4, 3, 3) && !mk_structure(4, 3, 1) && !mk_structure(3, 0, 2));
    }

    #[test]
    fn validation() {
        let mut p = RobotParams::reference();
        p.m1 = 0.0;
        assert!(p.validate().unwrap_err().to_string().contains("robot.m1"));
        let mut p = RobotParams::reference();
        p.beta2 = f64::NAN;
        assert!(p.validate().is_err());
    }
}
