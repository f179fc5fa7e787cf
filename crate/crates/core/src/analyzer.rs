//! Delay-dependent stability LMIs, control-cycle bisection and Lyapunov
//! synthesis for the non-networked closed loop.
//!
//! For bound matrices `F, W, S, M_k` and delay bounds `r_k` the certificate
//! asks for positive diagonal `R_k, Y₁, Y₂` and matrices `X₁₁⁽ᵏ⁾, X₁₂⁽ᵏ⁾,
//! X₂₂⁽ᵏ⁾` with, for every channel `k`,
//!
//! ```text
//! ⎡ X₁₁  X₁₂  −WᵀM_k − Y₁M_k ⎤
//! ⎢  *   X₂₂      −Y₂M_k     ⎥ ⪰ 0
//! ⎣  *    *         R_k      ⎦
//! ```
//!
//! and
//!
//! ```text
//! ⎡ −S + Y₁F + FᵀY₁ + Σ r_k X₁₁⁽ᵏ⁾   FᵀY₂ + Y₁ + Σ r_k X₁₂⁽ᵏ⁾      ⎤
//! ⎣             *                   −2Y₂ + Σ r_k (X₂₂⁽ᵏ⁾ + R_k) ⎦ ≺ 0.
//! ```
//!
//! The `(1,1)` entry is the symmetric part of `−S + 2Y₁F`, which leaves the
//! quadratic form it is used in unchanged.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lmi::{AffineBlockBuilder, BlockSign, LmiProblem, VarBlock, VarKind, VariableLayout};
use crate::matrix::{is_definite, Mat, Sign, SymMat};
use crate::sdp::{maximize_linear, solve_feasibility, SdpStatus, SdpVerdict, SolverConfig};

/// Inputs of the delay-dependent certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemBounds {
    f: Mat,
    w: Mat,
    s: SymMat,
    m: Vec<Mat>,
    r: Vec<f64>,
}

impl SystemBounds {
    /// Validates shapes and signs: `F`, `W`, `M_k` entrywise non-negative,
    /// `S` positive definite, `r_k ≥ 0`.
    pub fn new(f: Mat, w: Mat, s: SymMat, m: Vec<Mat>, r: Vec<f64>) -> Result<Self> {
        let n = s.dim();
        let square = |name: &str, a: &Mat| -> Result<()> {
            if a.rows() != n || a.cols() != n {
                return Err(Error::Dimension(format!("{name} is {}x{}, expected {n}x{n}", a.rows(), a.cols())));
            }
            if !a.is_nonnegative() {
                return Err(invalid(format!("{name} must be entrywise non-negative")));
            }
            Ok(())
        };
        square("F", &f)?;
        square("W", &w)?;
        for (k, mk) in m.iter().enumerate() {
            square(&format!("M{}", k + 1), mk)?;
        }
        if m.len() != r.len() {
            return Err(Error::Dimension(format!("{} bound matrices but {} delay bounds", m.len(), r.len())));
        }
        if let Some(bad) = r.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("delay bounds must be finite and >= 0, got {bad}")));
        }
        if !is_definite(&s, Sign::Positive, 0.0)? || s.min_eigenvalue() <= 0.0 {
            return Err(invalid("S must be positive definite"));
        }
        Ok(Self { f, w, s, m, r })
    }

    pub fn n(&self) -> usize {
        self.s.dim()
    }

    pub fn q(&self) -> usize {
        self.m.len()
    }

    pub fn f(&self) -> &Mat {
        &self.f
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn s(&self) -> &SymMat {
        &self.s
    }

    pub fn m(&self) -> &[Mat] {
        &self.m
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    /// Same matrices, new delay bounds.
    pub fn with_delays(&self, r: Vec<f64>) -> Result<Self> {
        Self::new(self.f.clone(), self.w.clone(), self.s.clone(), self.m.clone(), r)
    }
}

/// Which `W` factor enters the `(1,3)` block of the per-channel LMI.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingForm {
    /// `−WᵀM_k − Y₁M_k` (default).
    #[default]
    TransposeW,
    /// `−WM_k − Y₁M_k` (alternative reading; equal when `W` is symmetric).
    PlainW,
}

/// Variables of the stability LMIs, by role.
#[derive(Debug, Clone)]
pub struct StabilityVars {
    pub r: Vec<VarBlock>,
    pub y1: VarBlock,
    pub y2: VarBlock,
    pub x11: Vec<VarBlock>,
    pub x12: Vec<VarBlock>,
    pub x22: Vec<VarBlock>,
}

/// Builds the stability LMIs with the default coupling form.
pub fn build_stability_lmis(bounds: &SystemBounds) -> Result<LmiProblem> {
    build_stability_lmis_with(bounds, CouplingForm::default()).map(|(p, _)| p)
}

pub fn build_stability_lmis_with(bounds: &SystemBounds, coupling: CouplingForm) -> Result<(LmiProblem, StabilityVars)> {
    let n = bounds.n();
    let q = bounds.q();
    let mut layout = VariableLayout::new();
    let r_vars = (1..=q)
        .map(|k| layout.add(format!("R{k}"), VarKind::DiagonalPositive, n))
        .collect::<Result<Vec<_>>>()?;
    let y1 = layout.add("Y1", VarKind::DiagonalPositive, n)?;
    let y2 = layout.add("Y2", VarKind::DiagonalPositive, n)?;
    let (mut x11, mut x12, mut x22) = (Vec::new(), Vec::new(), Vec::new());
    for k in 1..=q {
        x11.push(layout.add(format!("X11_{k}"), VarKind::SymmetricFree, n)?);
        x12.push(layout.add(format!("X12_{k}"), VarKind::FullFree, n)?);
        x22.push(layout.add(format!("X22_{k}"), VarKind::SymmetricFree, n)?);
    }
    let diag = |v: &VarBlock, i: usize| v.index(i, i).expect("diagonal entry");

    let w = bounds.w.as_dmatrix();
    let w_factor = match coupling {
        CouplingForm::TransposeW => w.transpose(),
        CouplingForm::PlainW => w.clone(),
    };

    let mut problem = LmiProblem::new(layout);
    for k in 0..q {
        let mk = bounds.m[k].as_dmatrix();
        let mut b = AffineBlockBuilder::new(format!("channel_{}", k + 1), 3 * n, BlockSign::Psd);
        b.add_variable(&x11[k], 0, 0, 1.0);
        b.add_variable(&x12[k], 0, n, 1.0);
        b.add_variable(&x22[k], n, n, 1.0);
        b.add_variable(&r_vars[k], 2 * n, 2 * n, 1.0);
        b.add_constant_block(0, 2 * n, &(-(&w_factor * mk)));
        for a in 0..n {
            for c in 0..n {
                let v = mk[(a, c)];
                if v != 0.0 {
                    // (Y M)_ac = y_a M_ac
                    b.add_term_mirrored(diag(&y1, a), a, 2 * n + c, -v);
                    b.add_term_mirrored(diag(&y2, a), n + a, 2 * n + c, -v);
                }
            }
        }
        problem.push(b.build()?);
    }

    let f = bounds.f.as_dmatrix();
    let mut b = AffineBlockBuilder::new("decrease", 2 * n, BlockSign::Nd);
    b.add_constant_block(0, 0, &(-bounds.s.as_dmatrix()));
    for a in 0..n {
        for c in 0..n {
            let v = f[(a, c)];
            if v != 0.0 {
                // Y₁F + FᵀY₁
                b.add_term_mirrored(diag(&y1, a), a, c, v);
                // (FᵀY₂)_ca = F_ac y_a
                b.add_term_mirrored(diag(&y2, a), c, n + a, v);
            }
        }
        b.add_term_mirrored(diag(&y1, a), a, n + a, 1.0);
        b.add_term_raw(diag(&y2, a), n + a, n + a, -2.0);
    }
    for k in 0..q {
        let rk = bounds.r[k];
        if rk != 0.0 {
            b.add_variable(&x11[k], 0, 0, rk);
            b.add_variable(&x12[k], 0, n, rk);
            b.add_variable(&x22[k], n, n, rk);
            b.add_variable(&r_vars[k], n, n, rk);
        }
    }
    problem.push(b.build()?);

    Ok((problem, StabilityVars { r: r_vars, y1, y2, x11, x12, x22 }))
}

/// Feasible verdict ⇒ the delayed system is certified asymptotically stable.
pub fn check_stability(bounds: &SystemBounds, config: &SolverConfig) -> Result<SdpVerdict> {
    check_stability_with(bounds, CouplingForm::default(), config)
}

pub fn check_stability_with(bounds: &SystemBounds, coupling: CouplingForm, config: &SolverConfig) -> Result<SdpVerdict> {
    let (problem, _) = build_stability_lmis_with(bounds, coupling)?;
    solve_feasibility(&problem, config)
}

/// One bisection probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundProbe {
    /// Control cycle, seconds.
    pub control_cycle: f64,
    pub status: SdpStatus,
    pub margin: f64,
    pub slack_upper_bound: f64,
    pub iterations: usize,
}

impl BoundProbe {
    pub fn feasible(&self) -> bool {
        self.status == SdpStatus::Feasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSearchResult {
    /// Largest probed control cycle with a feasible certificate, seconds.
    pub t_star: f64,
    /// Probes in the order they were run.
    pub probes: Vec<BoundProbe>,
    pub tolerance: f64,
}

impl BoundSearchResult {
    /// Every feasible probe lies below every non-feasible one.
    pub fn is_monotone(&self) -> bool {
        let max_ok = self.probes.iter().filter(|p| p.feasible()).map(|p| p.control_cycle).fold(f64::MIN, f64::max);
        let min_bad = self.probes.iter().filter(|p| !p.feasible()).map(|p| p.control_cycle).fold(f64::MAX, f64::min);
        max_ok < min_bad
    }
}

/// Bisects the largest certified control cycle in `[t_lo, t_hi]`.
///
/// Inconclusive verdicts count as not certified.
pub fn max_delay_bound<B>(
    bounds_of_t: B,
    t_lo: f64,
    t_hi: f64,
    tol: f64,
    coupling: CouplingForm,
    config: &SolverConfig,
) -> Result<BoundSearchResult>
where
    B: Fn(f64) -> Result<SystemBounds>,
{
    if !(t_lo > 0.0 && t_hi > t_lo && tol > 0.0) || !t_hi.is_finite() {
        return Err(invalid(format!("need 0 < t_lo < t_hi and tol > 0, got [{t_lo}, {t_hi}], tol {tol}")));
    }
    let mut probes = Vec::new();
    let mut probe = |t: f64| -> Result<bool> {
        let verdict = check_stability_with(&bounds_of_t(t)?, coupling, config)?;
        log::info!("T = {:.6} ms: {:?} (margin {:e})", t * 1e3, verdict.status, verdict.margin);
        let p = BoundProbe {
            control_cycle: t,
            status: verdict.status,
            margin: verdict.margin,
            slack_upper_bound: verdict.upper_bound,
            iterations: verdict.iterations,
        };
        probes.push(p);
        Ok(p.feasible())
    };

    if !probe(t_lo)? {
        return Err(invalid(format!("system not certifiable even at lower bound T = {t_lo} s")));
    }
    if tol >= t_hi - t_lo {
        return Ok(BoundSearchResult { t_star: t_lo, probes, tolerance: tol });
    }
    if probe(t_hi)? {
        return Err(invalid(format!("upper bracket T = {t_hi} s is already certified; raise t_hi")));
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if probe(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BoundSearchResult { t_star: lo, probes, tolerance: tol })
}

/// Quadratic Lyapunov certificate `V₁ = xᵀPx` for `ẋ = Ax`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCertificate {
    pub p: SymMat,
    pub q: SymMat,
    pub alpha: f64,
    pub a: Mat,
}

impl LyapunovCertificate {
    /// Decay matrix `S = Q`.
    pub fn s(&self) -> SymMat {
        self.q.clone()
    }

    /// Gradient bound `W = P̄`.
    pub fn w(&self) -> Mat {
        self.p.as_mat().abs()
    }

    /// Vector-field bound `F = Ā`.
    pub fn f(&self) -> Mat {
        self.a.abs()
    }

    /// Combines the certificate with per-channel bounds `M_k` and delay bounds.
    pub fn bounds(&self, m: Vec<Mat>, r: Vec<f64>) -> Result<SystemBounds> {
        SystemBounds::new(self.f(), self.w(), self.s(), m, r)
    }

    /// Checks `P ≻ 0`, `P ⪯ I`, `AᵀP + PA ⪯ −Q`, `Q ⪰ αI`, `Q_ij ≤ 0` (i ≠ j).
    pub fn invariant_violations(&self) -> Vec<String> {
        let n = self.p.dim();
        let p = self.p.as_dmatrix();
        let q = self.q.as_dmatrix();
        let a = self.a.as_dmatrix();
        let mut out = Vec::new();
        let check = |m: DMatrix<f64>, what: &str, out: &mut Vec<String>| match SymMat::from_dmatrix(m) {
            Ok(s) if s.min_eigenvalue() >= 0.0 => {}
            Ok(s) => out.push(format!("{what}: min eigenvalue {:e}", s.min_eigenvalue())),
            Err(e) => out.push(format!("{what}: {e}")),
        };
        if self.p.min_eigenvalue() <= 0.0 {
            out.push("P is not positive definite".into());
        }
        check(DMatrix::identity(n, n) - p, "I - P", &mut out);
        check(-(a.transpose() * p + p * a) - q, "-(A'P + PA) - Q", &mut out);
        check(q - DMatrix::identity(n, n) * self.alpha, "Q - alpha I", &mut out);
        for i in 0..n {
            for j in (i + 1)..n {
                if q[(i, j)] > 0.0 {
                    out.push(format!("Q[{i}][{j}] = {:e} > 0", q[(i, j)]));
                }
            }
        }
        out
    }
}

/// Lower bound `P ⪰ εI` realising `P ≻ 0`.
pub const P_FLOOR: f64 = 1e-6;

pub fn is_hurwitz(a: &Mat) -> bool {
    a.is_square() && a.as_dmatrix().complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Builds `max α  s.t.  P ⪰ εI, P ⪯ I, AᵀP + PA ⪯ −Q, Q ⪰ αI, Q_ij ≤ 0`.
pub fn lyapunov_problem(a: &Mat) -> Result<LmiProblem> {
    if !a.is_square() {
        return Err(Error::Dimension("A must be square".into()));
    }
    let n = a.rows();
    let mut layout = VariableLayout::new();
    let p = layout.add("P", VarKind::SymmetricFree, n)?;
    let q = layout.add("Q", VarKind::SymmetricFree, n)?;
    let alpha = layout.add("alpha", VarKind::FullFree, 1)?;
    let alpha_idx = alpha.offset;
    let eye = DMatrix::<f64>::identity(n, n);
    let am = a.as_dmatrix();

    let mut lower = AffineBlockBuilder::new("P_floor", n, BlockSign::Psd);
    lower.add_constant_block(0, 0, &(-&eye * P_FLOOR));
    lower.add_variable(&p, 0, 0, 1.0);

    let mut upper = AffineBlockBuilder::new("P_cap", n, BlockSign::Psd);
    upper.add_constant_block(0, 0, &eye);
    upper.add_variable(&p, 0, 0, -1.0);

    let mut decay = AffineBlockBuilder::new("decay", n, BlockSign::Psd);
    for i in 0..n {
        for j in i..n {
            let s = p.index(i, j).expect("symmetric entry");
            let mut e = DMatrix::<f64>::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            decay.add_term_block(s, 0, 0, &(-(am.transpose() * &e + &e * am)));
        }
    }
    decay.add_variable(&q, 0, 0, -1.0);

    let mut floor = AffineBlockBuilder::new("Q_floor", n, BlockSign::Psd);
    floor.add_variable(&q, 0, 0, 1.0);
    floor.add_term_block(alpha_idx, 0, 0, &(-&eye));

    let mut objective = vec![0.0; layout.total_scalars()];
    objective[alpha_idx] = 1.0;
    let mut problem = LmiProblem::new(layout).with_objective(objective);
    for b in [lower, upper, decay, floor] {
        problem.push(b.build()?);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut b = AffineBlockBuilder::new(format!("Q_offdiag_{}_{}", i + 1, j + 1), 1, BlockSign::Psd);
            b.add_term_raw(q.index(i, j).expect("symmetric entry"), 0, 0, -1.0);
            problem.push(b.build()?);
        }
    }
    Ok(problem)
}

/// Maximises the guaranteed decay of `V₁ = xᵀPx` along `ẋ = Ax` with `P ⪯ I`.
pub fn synthesize_lyapunov(a: &Mat, config: &SolverConfig) -> Result<LyapunovCertificate> {
    if !is_hurwitz(a) {
        return Err(invalid("A is not Hurwitz; the non-networked loop must be asymptotically stable"));
    }
    let problem = lyapunov_problem(a)?;
    let verdict = maximize_linear(&problem, config)?;
    if verdict.status != SdpStatus::Feasible {
        return Err(Error::Numeric(format!("Lyapunov synthesis ended {:?}", verdict.status)));
    }
    let layout = &problem.layout;
    let value = |name: &str| layout.block(name).expect("declared variable").value(&verdict.point);
    let cert = LyapunovCertificate {
        p: SymMat::from_dmatrix(value("P"))?,
        q: SymMat::from_dmatrix(value("Q"))?,
        alpha: verdict.point[layout.block("alpha").expect("declared variable").offset],
        a: a.clone(),
    };
    let violations = cert.invariant_violations();
    if !violations.is_empty() {
        return Err(Error::Numeric(format!("certificate fails re-check: {}", violations.join("; "))));
    }
    Ok(cert)
}
