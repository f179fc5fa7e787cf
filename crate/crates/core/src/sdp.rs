//! Feasibility and linear maximisation over LMI constraints.
//!
//! Both entry points run a primal log-barrier path-following method on a
//! small dense problem:
//!
//! * [`solve_feasibility`] maximises a common slack `t` with every `⪰ 0`
//!   block `⪰ tI`, every `≺ 0` block `⪯ −tI` and every positive diagonal
//!   scalar `≥ t`, inside the box `|zᵢ| ≤ variable_bound`. The sign of the
//!   optimal `t` against `margin_tolerance` is the verdict.
//! * [`maximize_linear`] first finds a strictly feasible point that way and
//!   then follows the central path of `max cᵀz` with slack zero.
//!
//! Verdicts never trust the optimiser: the reported margin is recomputed
//! from Jacobi eigenvalues of every block at the returned point.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lmi::{BlockSign, LmiProblem};
use crate::matrix::{min_eigenvalue, SymMat};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Budget of Newton steps across all barrier stages.
    pub max_iterations: usize,
    /// Slack below which a verdict is not trusted either way.
    pub margin_tolerance: f64,
    /// Box `|zᵢ| ≤ variable_bound` on every scalar.
    pub variable_bound: f64,
    /// Kept for reproducible configuration files; the barrier method itself
    /// is deterministic and draws no random numbers.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 20_000, margin_tolerance: 1e-7, variable_bound: 1e6, seed: 42 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_tolerance > 0.0) || !self.margin_tolerance.is_finite() {
            return Err(invalid("solver.margin_tolerance must be a positive finite number"));
        }
        if !(self.variable_bound > 0.0) || !self.variable_bound.is_finite() {
            return Err(invalid("solver.variable_bound must be a positive finite number"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("solver.max_iterations must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdpVerdict {
    pub status: SdpStatus,
    pub point: Vec<f64>,
    /// Worst signed definiteness slack over all blocks and positive scalars
    /// at `point`, from independent eigenvalue evaluation.
    pub margin: f64,
    /// Upper bound on the optimal slack (feasibility) or objective
    /// (maximisation) from the barrier duality gap.
    pub upper_bound: f64,
    pub iterations: usize,
    pub objective: Option<f64>,
    /// Objective after each completed barrier stage (maximisation only).
    pub objective_history: Vec<f64>,
}

impl SdpVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == SdpStatus::Feasible
    }
}

/// Worst signed slack of `problem` at `point`: `λ_min` of each `⪰ 0` block,
/// `−λ_max` of each `≺ 0` block, and each positive diagonal scalar.
pub fn constraint_margin(problem: &LmiProblem, point: &[f64]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for (block, value) in problem.constraints.iter().zip(problem.evaluate(point)?) {
        let slack = match block.sign {
            BlockSign::Psd => min_eigenvalue(&value),
            BlockSign::Nd => {
                let neg = SymMat::from_dmatrix(-value.as_dmatrix())?;
                min_eigenvalue(&neg)
            }
        };
        worst = worst.min(slack);
    }
    for idx in problem.layout.positive_scalars() {
        worst = worst.min(point[idx]);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Barrier machinery

/// `constant + Σ yᵢ·termᵢ ≻ 0`.
struct MatrixCone {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

/// `constant + Σ yᵢ·coeffᵢ > 0`.
struct LinearCone {
    constant: f64,
    coeffs: Vec<(usize, f64)>,
}

struct Barrier {
    nvar: usize,
    matrices: Vec<MatrixCone>,
    linear: Vec<LinearCone>,
    /// minimise cost·y
    cost: DVector<f64>,
}

struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl MatrixCone {
    fn at(&self, y: &[f64]) -> DMatrix<f64> {
        let mut g = self.constant.clone();
        for (i, t) in &self.terms {
            g += t * y[*i];
        }
        g
    }
}

impl LinearCone {
    fn at(&self, y: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(i, c)| c * y[*i]).sum::<f64>()
    }
}

impl Barrier {
    fn degree(&self) -> f64 {
        (self.matrices.iter().map(|m| m.constant.nrows()).sum::<usize>() + self.linear.len()) as f64
    }

    /// Barrier value, or `None` outside the open feasible set.
    fn value(&self, y: &[f64]) -> Option<f64> {
        let mut phi = 0.0;
        for cone in &self.matrices {
            let chol = Cholesky::new(cone.at(y))?;
            phi -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        for lin in &self.linear {
            let s = lin.at(y);
            if !(s > 0.0) {
                return None;
            }
            phi -= s.ln();
        }
        phi.is_finite().then_some(phi)
    }

    fn local(&self, y: &[f64]) -> Option<Local> {
        let n = self.nvar;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut value = 0.0;
        for cone in &self.matrices {
            let chol = Cholesky::new(cone.at(y))?;
            let l = chol.l();
            value -= 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let d = l.nrows();
            let linv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
            // S_i = L⁻¹ T_i L⁻ᵀ; ∂φ/∂y_i = -tr S_i, ∂²φ/∂y_i∂y_j = <S_i, S_j>.
            let scaled: Vec<(usize, DMatrix<f64>)> =
                cone.terms.iter().map(|(i, t)| (*i, &linv * t * linv.transpose())).collect();
            for (a, (i, si)) in scaled.iter().enumerate() {
                grad[*i] -= si.trace();
                for (j, sj) in scaled.iter().skip(a) {
                    let v = si.dot(sj);
                    hess[(*i, *j)] += v;
                    if i != j {
                        hess[(*j, *i)] += v;
                    }
                }
            }
        }
        for lin in &self.linear {
            let s = lin.at(y);
            if !(s > 0.0) {
                return None;
            }
            value -= s.ln();
            for &(i, ci) in &lin.coeffs {
                grad[i] -= ci / s;
                for &(j, cj) in &lin.coeffs {
                    hess[(i, j)] += ci * cj / (s * s);
                }
            }
        }
        Some(Local { value, grad, hess })
    }
}

struct PathResult {
    y: Vec<f64>,
    iterations: usize,
    /// Duality-gap bound `ν/τ` of the last centred stage (∞ if none finished).
    gap: f64,
    history: Vec<f64>,
}

#[derive(Clone, Copy)]
struct PathOptions {
    gap_target: f64,
    /// Scale `gap_target` by `1 + |objective|`.
    relative_gap: bool,
    max_iterations: usize,
    /// Stop as soon as this predicate holds at a centred point.
    stop_when: Option<fn(&[f64], usize) -> bool>,
}

/// Solves `H Δ = −g` with increasing diagonal regularisation if needed.
fn newton_direction(hess: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if reg > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += reg * scale;
            }
        }
        if let Some(chol) = Cholesky::new(h) {
            let dir = chol.solve(&(-g));
            if dir.iter().all(|v| v.is_finite()) {
                return Some(dir);
            }
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

fn follow_path(barrier: &Barrier, y0: Vec<f64>, opts: PathOptions) -> PathResult {
    const MU: f64 = 10.0;
    const INNER_TOL: f64 = 1e-10;
    const ARMIJO: f64 = 0.01;
    // Newton steps per stage before settling for a looser centring; on
    // ill-conditioned stages the decrement plateaus at rounding level.
    const STAGE_STEPS: usize = 50;
    const LOOSE_TOL: f64 = 1e-4;

    let nu = barrier.degree();
    let mut y = y0;
    let mut tau = 1.0;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut history = Vec::new();

    'outer: loop {
        // Centre for the current tau.
        let mut centred = false;
        let mut stage_steps = 0;
        while iterations < opts.max_iterations {
            let Some(local) = barrier.local(&y) else { break 'outer };
            let g = &barrier.cost * tau + &local.grad;
            let Some(dir) = newton_direction(&local.hess, &g) else { break 'outer };
            let decrement = -g.dot(&dir);
            iterations += 1;
            stage_steps += 1;
            if decrement / 2.0 <= INNER_TOL {
                centred = true;
                break;
            }
            if stage_steps > STAGE_STEPS {
                centred = decrement / 2.0 <= LOOSE_TOL;
                break;
            }
            let f0 = tau * barrier.cost.dot(&DVector::from_column_slice(&y)) + local.value;
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-16 {
                let cand: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                if let Some(phi) = barrier.value(&cand) {
                    let f1 = tau * barrier.cost.dot(&DVector::from_column_slice(&cand)) + phi;
                    if f1 <= f0 - ARMIJO * step * decrement {
                        y = cand;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // Numerically centred as far as floating point allows.
                centred = decrement / 2.0 <= LOOSE_TOL;
                break;
            }
        }
        if !centred {
            break;
        }
        gap = nu / tau;
        history.push(barrier.cost.dot(&DVector::from_column_slice(&y)));
        let target = if opts.relative_gap {
            opts.gap_target * (1.0 + barrier.cost.dot(&DVector::from_column_slice(&y)).abs())
        } else {
            opts.gap_target
        };
        if gap <= target {
            break;
        }
        if let Some(stop) = opts.stop_when {
            if stop(&y, barrier.nvar) {
                break;
            }
        }
        if iterations >= opts.max_iterations {
            break;
        }
        tau *= MU;
    }
    PathResult { y, iterations, gap, history }
}

fn slack_barrier(problem: &LmiProblem, config: &SolverConfig, with_slack: bool) -> Barrier {
    let m = problem.total_scalars();
    let t = m; // index of the slack variable when present
    let nvar = if with_slack { m + 1 } else { m };
    let mut matrices = Vec::new();
    let mut linear = Vec::new();

    for block in &problem.constraints {
        let flip = match block.sign {
            BlockSign::Psd => 1.0,
            BlockSign::Nd => -1.0,
        };
        if block.dim == 1 {
            let mut coeffs: Vec<(usize, f64)> =
                block.terms.iter().map(|(i, b)| (*i, flip * b.get(0, 0))).collect();
            if with_slack {
                coeffs.push((t, -1.0));
            }
            linear.push(LinearCone { constant: flip * block.constant.get(0, 0), coeffs });
            continue;
        }
        let mut terms: Vec<(usize, DMatrix<f64>)> =
            block.terms.iter().map(|(i, b)| (*i, b.as_dmatrix() * flip)).collect();
        if with_slack {
            terms.push((t, -DMatrix::identity(block.dim, block.dim)));
        }
        matrices.push(MatrixCone { constant: block.constant.as_dmatrix() * flip, terms });
    }
    for idx in problem.layout.positive_scalars() {
        let mut coeffs = vec![(idx, 1.0)];
        if with_slack {
            coeffs.push((t, -1.0));
        }
        linear.push(LinearCone { constant: 0.0, coeffs });
    }
    for i in 0..m {
        linear.push(LinearCone { constant: config.variable_bound, coeffs: vec![(i, -1.0)] });
        linear.push(LinearCone { constant: config.variable_bound, coeffs: vec![(i, 1.0)] });
    }
    let mut cost = DVector::zeros(nvar);
    if with_slack {
        // keeps the slack bounded when nothing else does
        linear.push(LinearCone { constant: config.variable_bound, coeffs: vec![(t, -1.0)] });
        cost[t] = -1.0;
    } else if let Some(c) = &problem.objective {
        for (i, v) in c.iter().enumerate() {
            cost[i] = -v;
        }
    }
    Barrier { nvar, matrices, linear, cost }
}

fn initial_slack(problem: &LmiProblem) -> Result<f64> {
    let zero = vec![0.0; problem.total_scalars()];
    let margin = constraint_margin(problem, &zero)?;
    Ok(margin.min(0.0) - 1.0)
}

struct SlackSolve {
    point: Vec<f64>,
    slack: f64,
    gap: f64,
    iterations: usize,
}

fn maximize_slack(
    problem: &LmiProblem,
    config: &SolverConfig,
    stop_when: Option<fn(&[f64], usize) -> bool>,
) -> Result<SlackSolve> {
    let m = problem.total_scalars();
    let barrier = slack_barrier(problem, config, true);
    let mut y0 = vec![0.0; m + 1];
    y0[m] = initial_slack(problem)?;
    let opts = PathOptions {
        gap_target: config.margin_tolerance * 1e-2,
        relative_gap: false,
        max_iterations: config.max_iterations,
        stop_when,
    };
    let res = follow_path(&barrier, y0, opts);
    let slack = res.y[m];
    Ok(SlackSolve { point: res.y[..m].to_vec(), slack, gap: res.gap, iterations: res.iterations })
}

/// Decides whether the LMIs of `problem` admit a strictly feasible point.
pub fn solve_feasibility(problem: &LmiProblem, config: &SolverConfig) -> Result<SdpVerdict> {
    config.validate()?;
    problem.ensure_valid()?;
    if problem.objective.is_some() {
        return Err(invalid("solve_feasibility expects a problem without objective"));
    }
    let solve = maximize_slack(problem, config, None)?;
    let margin = constraint_margin(problem, &solve.point)?;
    let upper_bound = solve.slack + solve.gap;
    let tol = config.margin_tolerance;
    let status = if margin >= tol {
        SdpStatus::Feasible
    } else if upper_bound < -tol {
        SdpStatus::Infeasible
    } else {
        SdpStatus::Inconclusive
    };
    log::debug!(
        "feasibility: status {status:?}, margin {margin:e}, slack bound {upper_bound:e}, {} Newton steps",
        solve.iterations
    );
    Ok(SdpVerdict {
        status,
        point: solve.point,
        margin,
        upper_bound,
        iterations: solve.iterations,
        objective: None,
        objective_history: Vec::new(),
    })
}

fn slack_is_positive(y: &[f64], nvar: usize) -> bool {
    y[nvar - 1] > 0.0
}

/// Maximises `problem.objective` over the LMI constraints (slack zero).
pub fn maximize_linear(problem: &LmiProblem, config: &SolverConfig) -> Result<SdpVerdict> {
    config.validate()?;
    problem.ensure_valid()?;
    if problem.objective.is_none() {
        return Err(invalid("maximize_linear requires an objective"));
    }
    let tol = config.margin_tolerance;

    // Phase one: a strictly feasible start, stopping once the slack is
    // comfortably positive.
    let phase1 = maximize_slack(problem, config, Some(slack_is_positive))?;
    let start_margin = constraint_margin(problem, &phase1.point)?;
    if start_margin <= 0.0 || phase1.slack <= 0.0 {
        let upper_bound = phase1.slack + phase1.gap;
        let status = if upper_bound < -tol { SdpStatus::Infeasible } else { SdpStatus::Inconclusive };
        return Ok(SdpVerdict {
            status,
            point: phase1.point,
            margin: start_margin,
            upper_bound: f64::NAN,
            iterations: phase1.iterations,
            objective: None,
            objective_history: Vec::new(),
        });
    }

    let barrier = slack_barrier(problem, config, false);
    let opts = PathOptions {
        gap_target: 1e-9,
        relative_gap: true,
        max_iterations: config.max_iterations.saturating_sub(phase1.iterations).max(1),
        stop_when: None,
    };
    let res = follow_path(&barrier, phase1.point, opts);
    let margin = constraint_margin(problem, &res.y)?;
    let value = problem.objective_value(&res.y).expect("objective present");
    let history: Vec<f64> = res.history.iter().map(|v| -v).collect();
    log::debug!("maximisation: objective {value}, margin {margin:e}, {} Newton steps", res.iterations);
    Ok(SdpVerdict {
        status: if margin >= 0.0 { SdpStatus::Feasible } else { SdpStatus::Inconclusive },
        point: res.y,
        margin,
        upper_bound: value + res.gap,
        iterations: phase1.iterations + res.iterations,
        objective: Some(value),
        objective_history: history,
    })
}
