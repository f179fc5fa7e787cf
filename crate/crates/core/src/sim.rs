//! Network delay traces and fixed-step integration of delayed closed loops.
//!
//! Timing model per control cycle `k` (`c_k = kT`):
//!
//! 1. every sensor samples at `c_k + u`, `u ~ U[0, h]`, and sends the sample
//!    to the controller, arriving after `U[0, η_m]` unless lost;
//! 2. the controller computes once every delivered sample of the cycle is
//!    in (at `c_k` if none is), using the newest sample it holds per sensor;
//! 3. the command for every actuator arrives `U[0, η_m]` later unless lost;
//!    an arrival older than the command already held is discarded.
//!
//! Each link loses a packet with probability `p`, but never more than `n`
//! in a row. Channel `(s, a)` then sees `d(t) = t − σ(t)` where `σ(t)` is
//! the sample time of sensor `s` inside the command actuator `a` holds:
//! slope one between arrivals, a drop at each arrival, and
//! `d(t) < (2n + 1)T + h + 2η_m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::DelayedField;
use crate::robot::{RobotField, RobotParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkScenario {
    /// Control cycle `T`, seconds.
    pub control_cycle: f64,
    /// Largest one-way transmission delay `η_m`, seconds.
    pub transmission_delay_max: f64,
    /// Largest sampling offset `h` inside a cycle, seconds.
    pub sampling_bound_h: f64,
    /// Longest run of lost packets on one link.
    pub max_successive_losses: u32,
    pub loss_probability: f64,
    pub seed: u64,
    /// Simulated time, seconds.
    pub horizon: f64,
    /// Reject scenarios whose delay bound exceeds this, seconds.
    #[serde(default)]
    pub delay_cap: Option<f64>,
}

impl NetworkScenario {
    /// Sampling offset and transmission delays of a fifth of a cycle each,
    /// no losses, 20 s horizon: channel delays stay below `1.6 T`.
    pub fn lossless(control_cycle: f64, seed: u64) -> Self {
        Self {
            control_cycle,
            transmission_delay_max: 0.2 * control_cycle,
            sampling_bound_h: 0.2 * control_cycle,
            max_successive_losses: 0,
            loss_probability: 0.0,
            seed,
            horizon: 20.0,
            delay_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.control_cycle;
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid(format!("scenario.control_cycle must be positive, got {t}")));
        }
        if !(self.transmission_delay_max >= 0.0) || !self.transmission_delay_max.is_finite() {
            return Err(invalid("scenario.transmission_delay_max must be finite and >= 0"));
        }
        if !(self.sampling_bound_h >= 0.0 && self.sampling_bound_h <= t) {
            return Err(invalid(format!(
                "scenario.sampling_bound_h must lie in [0, control_cycle], got {}",
                self.sampling_bound_h
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(invalid(format!(
                "scenario.loss_probability must lie in [0, 1], got {}",
                self.loss_probability
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("scenario.horizon must be positive and finite"));
        }
        if let Some(cap) = self.delay_cap {
            if self.delay_bound() > cap {
                return Err(invalid(format!(
                    "scenario admits channel delays up to {:e} s, above delay_cap {cap:e} s",
                    self.delay_bound()
                )));
            }
        }
        Ok(())
    }

    /// Strict upper bound on every generated channel delay.
    pub fn delay_bound(&self) -> f64 {
        (2 * self.max_successive_losses + 1) as f64 * self.control_cycle
            + self.sampling_bound_h
            + 2.0 * self.transmission_delay_max
    }
}

/// Sample time `σ(t)` of one delay channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelTrace {
    /// `σ(t) = t`.
    Undelayed,
    /// `σ(t) = t − delay`.
    Constant { delay: f64 },
    /// `σ(t) = sample_times[i]` for `arrivals[i] ≤ t < arrivals[i + 1]`;
    /// `arrivals[0] = 0`.
    Held { arrivals: Vec<f64>, sample_times: Vec<f64> },
}

impl ChannelTrace {
    pub fn sample_time(&self, t: f64) -> f64 {
        match self {
            Self::Undelayed => t,
            Self::Constant { delay } => t - delay,
            Self::Held { arrivals, sample_times } => {
                let i = arrivals.partition_point(|a| *a <= t).max(1) - 1;
                sample_times[i]
            }
        }
    }

    pub fn delay(&self, t: f64) -> f64 {
        t - self.sample_time(t)
    }

    /// `sup d(t)` over `[0, horizon]`.
    pub fn max_delay(&self, horizon: f64) -> f64 {
        match self {
            Self::Undelayed => 0.0,
            Self::Constant { delay } => *delay,
            Self::Held { arrivals, sample_times } => {
                let mut worst: f64 = 0.0;
                for i in 0..arrivals.len() {
                    let end = arrivals.get(i + 1).copied().unwrap_or(horizon).min(horizon);
                    if arrivals[i] <= horizon {
                        worst = worst.max(end - sample_times[i]);
                    }
                }
                worst
            }
        }
    }

    /// Smallest gap between consecutive arrivals after the first.
    fn min_gap(&self) -> Option<f64> {
        match self {
            Self::Held { arrivals, .. } if arrivals.len() > 2 => {
                arrivals[1..].windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayTraces {
    pub channels: Vec<ChannelTrace>,
    pub horizon: f64,
    /// Strict a-priori bound on every channel delay.
    pub bound: f64,
}

impl DelayTraces {
    /// `q` channels without delay.
    pub fn undelayed(q: usize, horizon: f64) -> Self {
        Self { channels: vec![ChannelTrace::Undelayed; q], horizon, bound: 0.0 }
    }

    pub fn max_delay(&self) -> f64 {
        self.channels.iter().map(|c| c.max_delay(self.horizon)).fold(0.0, f64::max)
    }

    pub fn delays_at(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|c| c.delay(t)).collect()
    }
}

/// `(sensor, actuator)` of the four robot channels.
pub const ROBOT_COMPOSITION: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

struct Link {
    lost_in_row: u32,
}

impl Link {
    fn delivers(&mut self, lost_draw: f64, s: &NetworkScenario) -> bool {
        if self.lost_in_row >= s.max_successive_losses || lost_draw >= s.loss_probability {
            self.lost_in_row = 0;
            true
        } else {
            self.lost_in_row += 1;
            false
        }
    }
}

/// Generates the held-sample traces of every `(sensor, actuator)` channel.
pub fn generate_delays(scenario: &NetworkScenario, composition: &[(usize, usize)]) -> Result<DelayTraces> {
    scenario.validate()?;
    if composition.is_empty() {
        return Err(invalid("at least one delay channel is required"));
    }
    let sensors = composition.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let actuators = composition.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let (t_cycle, h, eta) = (scenario.control_cycle, scenario.sampling_bound_h, scenario.transmission_delay_max);
    let cycles = (scenario.horizon / t_cycle).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut sensor_links: Vec<Link> = (0..sensors).map(|_| Link { lost_in_row: 0 }).collect();
    let mut actuator_links: Vec<Link> = (0..actuators).map(|_| Link { lost_in_row: 0 }).collect();
    // delivered (sample time, arrival) per sensor, in cycle order
    let mut delivered: Vec<Vec<(f64, f64)>> = vec![Vec::new(); sensors];
    // (arrival, cycle, sample time per sensor) per actuator
    let mut commands: Vec<Vec<(f64, usize, Vec<f64>)>> = vec![Vec::new(); actuators];
    let lookback = 2 * scenario.max_successive_losses as usize + ((h + eta) / t_cycle).ceil() as usize + 2;

    for k in 0..cycles {
        let c = k as f64 * t_cycle;
        let mut compute_at = c;
        for s in 0..sensors {
            let sample = c + h * rng.gen::<f64>();
            let arrival = sample + eta * rng.gen::<f64>();
            if sensor_links[s].delivers(rng.gen(), scenario) {
                delivered[s].push((sample, arrival));
                compute_at = compute_at.max(arrival);
            }
        }
        let held: Vec<f64> = delivered
            .iter()
            .map(|d| {
                d.iter()
                    .rev()
                    .take(lookback)
                    .filter(|(_, arrival)| *arrival <= compute_at)
                    .map(|(sample, _)| *sample)
                    .fold(0.0, f64::max)
            })
            .collect();
        for a in 0..actuators {
            let arrival = compute_at + eta * rng.gen::<f64>();
            if actuator_links[a].delivers(rng.gen(), scenario) {
                commands[a].push((arrival, k, held.clone()));
            }
        }
    }

    let mut per_actuator: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::with_capacity(actuators);
    for mut cmds in commands {
        cmds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut arrivals = vec![0.0];
        let mut samples = vec![vec![0.0; sensors]];
        let mut newest: Option<usize> = None;
        for (arrival, cycle, held) in cmds {
            if newest.is_some_and(|n| cycle <= n) || arrival > scenario.horizon {
                continue;
            }
            newest = Some(cycle);
            arrivals.push(arrival);
            samples.push(held);
        }
        per_actuator.push((arrivals, samples));
    }

    let channels = composition
        .iter()
        .map(|&(s, a)| {
            let (arrivals, samples) = &per_actuator[a];
            ChannelTrace::Held { arrivals: arrivals.clone(), sample_times: samples.iter().map(|v| v[s]).collect() }
        })
        .collect();
    Ok(DelayTraces { channels, horizon: scenario.horizon, bound: scenario.delay_bound() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationOptions {
    /// Step, seconds.
    pub dt: f64,
    /// Keep every `record_stride`-th grid point.
    pub record_stride: usize,
    /// State norm treated as divergence.
    pub divergence_cap: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { dt: 1e-5, record_stride: 100, divergence_cap: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    /// Requested end time; the last sample is earlier if `divergent`.
    pub horizon: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Channel delays at each recorded time.
    pub delays: Vec<Vec<f64>>,
    pub divergent: bool,
}

impl Trajectory {
    pub fn error_norms(&self, equilibrium: &[f64]) -> Vec<f64> {
        self.states
            .iter()
            .map(|x| x.iter().zip(equilibrium).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect()
    }

    /// CSV with header `t,<state names>,d1..dq,err_norm`.
    pub fn to_csv(&self, state_names: &[&str], equilibrium: &[f64]) -> String {
        let q = self.delays.first().map_or(0, Vec::len);
        let mut header: Vec<String> = vec!["t".into()];
        header.extend(state_names.iter().map(|s| s.to_string()));
        header.extend((1..=q).map(|i| format!("d{i}")));
        header.push("err_norm".into());
        let mut out = header.join(",") + "\n";
        for ((t, x), (d, e)) in self.times.iter().zip(&self.states).zip(self.delays.iter().zip(self.error_norms(equilibrium))) {
            let row: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).chain(d.iter().copied()).chain([e]).map(|v| v.to_string()).collect();
            out += &row.join(",");
            out.push('\n');
        }
        out
    }
}

/// History on the integration grid, long enough for the largest delay.
struct History {
    n: usize,
    cap: usize,
    dt: f64,
    x0: Vec<f64>,
    buf: Vec<f64>,
    /// index of the newest stored grid point
    last: usize,
}

impl History {
    fn new(x0: &[f64], dt: f64, max_delay: f64) -> Self {
        let n = x0.len();
        let cap = (max_delay / dt).ceil() as usize + 4;
        let mut buf = vec![0.0; cap * n];
        buf[..n].copy_from_slice(x0);
        Self { n, cap, dt, x0: x0.to_vec(), buf, last: 0 }
    }

    fn point(&self, i: usize) -> &[f64] {
        let s = (i % self.cap) * self.n;
        &self.buf[s..s + self.n]
    }

    fn push(&mut self, x: &[f64]) {
        self.last += 1;
        let s = (self.last % self.cap) * self.n;
        self.buf[s..s + self.n].copy_from_slice(x);
    }

    /// `x(s)` by linear interpolation; beyond the newest grid point the
    /// segment to the current stage `(t_stage, x_stage)` is used.
    fn at(&self, s: f64, t_stage: f64, x_stage: &[f64], out: &mut [f64]) -> Result<()> {
        if s <= 0.0 {
            out.copy_from_slice(&self.x0);
            return Ok(());
        }
        let t_last = self.last as f64 * self.dt;
        if s >= t_last {
            let span = t_stage - t_last;
            let theta = if span > 0.0 { ((s - t_last) / span).min(1.0) } else { 0.0 };
            let xl = self.point(self.last);
            for i in 0..self.n {
                out[i] = xl[i] + theta * (x_stage[i] - xl[i]);
            }
            return Ok(());
        }
        let pos = s / self.dt;
        let i0 = (pos.floor() as usize).min(self.last - 1);
        if self.last - i0 >= self.cap - 1 {
            return Err(Error::Numeric(format!("delayed time {s} fell out of the stored history")));
        }
        let theta = pos - i0 as f64;
        let (a, b) = (self.point(i0), self.point(i0 + 1));
        for i in 0..self.n {
            out[i] = a[i] + theta * (b[i] - a[i]);
        }
        Ok(())
    }
}

/// Classical RK4 on `[0, horizon]` with constant initial history `x0`.
pub fn integrate<F: DelayedField + ?Sized>(
    field: &F,
    x0: &[f64],
    traces: &DelayTraces,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let n = field.dim();
    let q = field.channels();
    let dt = opts.dt;
    if x0.len() != n || traces.channels.len() != q {
        return Err(Error::Dimension(format!(
            "field expects state {n} and {q} channels, got {} and {}",
            x0.len(),
            traces.channels.len()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() || opts.record_stride == 0 || !(opts.divergence_cap > 0.0) {
        return Err(invalid("dt must be positive, record_stride >= 1, divergence_cap positive"));
    }
    if let Some(gap) = traces.channels.iter().filter_map(ChannelTrace::min_gap).reduce(f64::min) {
        if dt > gap / 4.0 {
            return Err(invalid(format!("dt = {dt:e} s exceeds a quarter of the smallest inter-arrival gap {gap:e} s")));
        }
    }
    let horizon = traces.horizon;
    let steps = (horizon / dt).round() as usize;
    let mut hist = History::new(x0, dt, traces.max_delay() + dt);

    let mut traj = Trajectory {
        dt,
        horizon,
        times: vec![0.0],
        states: vec![x0.to_vec()],
        delays: vec![traces.delays_at(0.0)],
        divergent: false,
    };
    let mut x = x0.to_vec();
    let mut delayed = vec![vec![0.0; n]; q];
    let mut k = vec![vec![0.0; n]; 4];
    let mut stage = vec![0.0; n];

    let eval = |t: f64,
                xs: &[f64],
                hist: &History,
                delayed: &mut Vec<Vec<f64>>,
                out: &mut [f64]|
     -> Result<()> {
        for (c, trace) in traces.channels.iter().enumerate() {
            match trace {
                ChannelTrace::Undelayed => delayed[c].copy_from_slice(xs),
                _ => hist.at(trace.sample_time(t), t, xs, &mut delayed[c])?,
            }
        }
        let args: Vec<&[f64]> = delayed.iter().map(Vec::as_slice).collect();
        field.eval(t, xs, &args, out)
    };

    for step in 0..steps {
        let t = step as f64 * dt;
        eval(t, &x, &hist, &mut delayed, &mut k[0])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[0])) {
            *s = xi + 0.5 * dt * ki;
        }
        eval(t + 0.5 * dt, &stage, &hist, &mut delayed, &mut k[1])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[1])) {
            *s = xi + 0.5 * dt * ki;
        }
        eval(t + 0.5 * dt, &stage, &hist, &mut delayed, &mut k[2])?;
        for (s, (xi, ki)) in stage.iter_mut().zip(x.iter().zip(&k[2])) {
            *s = xi + dt * ki;
        }
        eval(t + dt, &stage, &hist, &mut delayed, &mut k[3])?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        hist.push(&x);

        let t_next = (step + 1) as f64 * dt;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= opts.divergence_cap) {
            traj.divergent = true;
            break;
        }
        if (step + 1) % opts.record_stride == 0 || step + 1 == steps {
            traj.times.push(t_next);
            traj.states.push(x.clone());
            traj.delays.push(traces.delays_at(t_next));
        }
    }
    Ok(traj)
}

/// Error band for "settled".
pub const SETTLE_BAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityMetrics {
    /// Error below the band over the last tenth of the horizon.
    pub settled: bool,
    /// First time after which the error stays inside the band.
    pub settling_time: Option<f64>,
    pub peak_error: f64,
    pub final_error: f64,
    pub divergent: bool,
}

pub fn stability_metrics(traj: &Trajectory, equilibrium: &[f64]) -> StabilityMetrics {
    let err = traj.error_norms(equilibrium);
    let peak = err.iter().copied().fold(0.0, f64::max);
    if traj.divergent {
        return StabilityMetrics {
            settled: false,
            settling_time: None,
            peak_error: peak,
            final_error: 1e6,
            divergent: true,
        };
    }
    let last_outside = err.iter().rposition(|e| !(*e < SETTLE_BAND));
    let settling_time = match last_outside {
        None => Some(0.0),
        Some(i) if i + 1 < err.len() => Some(traj.times[i + 1]),
        Some(_) => None,
    };
    let tail_start = 0.9 * traj.horizon;
    let settled = err.iter().zip(&traj.times).filter(|(_, t)| **t >= tail_start).all(|(e, _)| *e < SETTLE_BAND);
    StabilityMetrics {
        settled,
        settling_time,
        peak_error: peak,
        final_error: err.last().copied().unwrap_or(0.0),
        divergent: false,
    }
}

/// Header names of the robot state in trajectory CSVs.
pub const ROBOT_STATE_NAMES: [&str; 4] = ["q1", "dq1", "q2", "dq2"];

/// One robot run under a freshly generated delay realisation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotRun {
    pub seed: u64,
    pub max_delay: f64,
    pub metrics: StabilityMetrics,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// Simulates the robot from `x0` (held constant before `t = 0`).
pub fn simulate_robot(
    params: &RobotParams,
    scenario: &NetworkScenario,
    x0: &[f64; 4],
    opts: &IntegrationOptions,
) -> Result<RobotRun> {
    params.validate()?;
    let traces = generate_delays(scenario, &ROBOT_COMPOSITION)?;
    let trajectory = integrate(&RobotField(*params), x0, &traces, opts)?;
    let metrics = stability_metrics(&trajectory, &params.equilibrium());
    Ok(RobotRun { seed: scenario.seed, max_delay: traces.max_delay(), metrics, trajectory })
}

/// [`simulate_robot`] for several seeds in parallel, results in seed order.
pub fn simulate_robot_seeds(
    params: &RobotParams,
    scenario: &NetworkScenario,
    seeds: &[u64],
    x0: &[f64; 4],
    opts: &IntegrationOptions,
) -> Result<Vec<RobotRun>> {
    seeds
        .par_iter()
        .map(|&seed| simulate_robot(params, &NetworkScenario { seed, ..*scenario }, x0, opts))
        .collect()
}
