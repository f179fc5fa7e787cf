//! Delayed vector fields `ẋ = f(t, x, x_d1, …, x_dq)`, the channel-by-channel
//! telescoping decomposition, and sampling-based bound estimation/audit.
//!
//! With `Γ_k = f(t, x, …, x, x_dk, …, x_dq)` (channels before `k` current,
//! channels from `k` on delayed) and `Γ_{q+1} = f(t, x, …, x)`,
//!
//! ```text
//! f(t, x, x_d1, …, x_dq) = f(t, x, …, x) + Σ_k (Γ_k − Γ_{k+1}),
//! ```
//!
//! and `Γ_k − Γ_{k+1}` differs only in channel `k`, which is what the
//! per-channel bounds `|Γ_k − Γ_{k+1}| ≤ M_k |x − x_dk|` control.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzer::SystemBounds;
use crate::error::{invalid, Error, Result};
use crate::matrix::Mat;

/// `ẋ = f(t, x, x_d1, …, x_dq)` on `R^dim` with `channels()` delayed arguments.
pub trait DelayedField {
    fn dim(&self) -> usize;
    fn channels(&self) -> usize;
    /// Writes `f(t, x, delayed[0], …)` into `out`.
    fn eval(&self, t: f64, x: &[f64], delayed: &[&[f64]], out: &mut [f64]) -> Result<()>;

    /// `f` with every delayed argument equal to `x`.
    fn eval_undelayed(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let args = vec![x; self.channels()];
        self.eval(t, x, &args, out)
    }
}

/// `ẋ = A x + Σ_k B_k x_dk`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDelayed {
    pub a: Mat,
    pub b: Vec<Mat>,
}

impl LinearDelayed {
    pub fn new(a: Mat, b: Vec<Mat>) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.iter().any(|bk| bk.rows() != n || bk.cols() != n) {
            return Err(Error::Dimension("A and every B_k must be n x n".into()));
        }
        Ok(Self { a, b })
    }
}

impl DelayedField for LinearDelayed {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn channels(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, _t: f64, x: &[f64], delayed: &[&[f64]], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let a = self.a.as_dmatrix();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| a[(i, j)] * x[j]).sum();
        }
        for (bk, xd) in self.b.iter().zip(delayed) {
            let bk = bk.as_dmatrix();
            for (i, o) in out.iter_mut().enumerate().take(n) {
                *o += (0..n).map(|j| bk[(i, j)] * xd[j]).sum::<f64>();
            }
        }
        Ok(())
    }
}

/// `Γ_k` for `k ∈ 1..=q+1`.
pub fn gamma<F: DelayedField + ?Sized>(
    field: &F,
    t: f64,
    x: &[f64],
    delayed: &[&[f64]],
    k: usize,
    out: &mut [f64],
) -> Result<()> {
    let q = field.channels();
    if k == 0 || k > q + 1 || delayed.len() != q {
        return Err(invalid(format!("gamma index {k} out of range 1..={}", q + 1)));
    }
    let args: Vec<&[f64]> = (0..q).map(|c| if c + 1 < k { x } else { delayed[c] }).collect();
    field.eval(t, x, &args, out)
}

/// Axis-aligned box of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Self { lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// `center ± half_widths`.
    pub fn around(center: &[f64], half_widths: &[f64]) -> Result<Self> {
        if center.len() != half_widths.len() {
            return Err(Error::Dimension("center and half widths differ in length".into()));
        }
        Self::new(
            center.iter().zip(half_widths).map(|(c, h)| c - h).collect(),
            center.iter().zip(half_widths).map(|(c, h)| c + h).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::Dimension("domain bounds must be non-empty and of equal length".into()));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(invalid(format!("domain interval {i} is empty or not finite: [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    /// Some interval has zero width.
    pub fn is_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| u <= l)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| if u > l { rng.gen_range(*l..=*u) } else { *l }).collect()
    }

    pub fn sample_coord(&self, j: usize, rng: &mut impl Rng) -> f64 {
        let (l, u) = (self.lower[j], self.upper[j]);
        if u > l {
            rng.gen_range(l..=u)
        } else {
            l
        }
    }

    fn grid_values(&self, j: usize) -> [f64; 3] {
        let (l, u) = (self.lower[j], self.upper[j]);
        [l, 0.5 * (l + u), u]
    }
}

/// Independent random stream `stream` of the root seed.
pub fn shard_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// All points of `{lower, mid, upper}^n`.
fn grid_points(domain: &StateDomain) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let mut out = vec![Vec::with_capacity(n)];
    for j in 0..n {
        let vals = domain.grid_values(j);
        out = out.into_iter().flat_map(|p| vals.iter().map(move |v| [p.clone(), vec![*v]].concat())).collect();
    }
    out
}

/// Worst secant `|f(…, z, …) − f(…, z + δe_j, …)|_i / |δ|` in channel `k`
/// seen on one `(k, j)` shard, channels before `k` held at `x`.
fn ratio_shard<F: DelayedField + Sync>(
    field: &F,
    domain: &StateDomain,
    k: usize,
    j: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = field.dim();
    let q = field.channels();
    let mut sup = vec![0.0f64; n];
    let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
    let mut record = |x: &[f64], base: &[f64], zj: f64, others: &[Vec<f64>], sup: &mut Vec<f64>| -> Result<()> {
        let delta = zj - base[j];
        if delta.abs() < 1e-9 {
            return Ok(());
        }
        let mut moved = base.to_vec();
        moved[j] = zj;
        let mut delayed: Vec<&[f64]> = others.iter().map(|v| v.as_slice()).collect();
        delayed[k - 1] = base;
        gamma(field, 0.0, x, &delayed, k, &mut ga)?;
        delayed[k - 1] = &moved;
        gamma(field, 0.0, x, &delayed, k, &mut gb)?;
        for i in 0..n {
            let r = (ga[i] - gb[i]).abs() / delta.abs();
            if r.is_finite() && r > sup[i] {
                sup[i] = r;
            }
        }
        Ok(())
    };

    // Deterministic corners and midpoints, other channels undelayed.
    for x in grid_points(domain) {
        let others = vec![x.clone(); q];
        for v in [domain.lower[j], domain.upper[j]] {
            record(&x, &x, v, &others, &mut sup)?;
        }
    }

    let mut rng = shard_rng(seed, (k * n + j) as u64);
    for s in 0..samples {
        let x = domain.sample(&mut rng);
        let zj = domain.sample_coord(j, &mut rng);
        let others: Vec<Vec<f64>> = (0..q).map(|_| domain.sample(&mut rng)).collect();
        // Alternate between secants based at x (plain Γ_k − Γ_{k+1}) and
        // at an arbitrary point, which the coordinate-path argument needs.
        let base = if s % 2 == 0 { x.clone() } else { domain.sample(&mut rng) };
        record(&x, &base, zj, &others, &mut sup)?;
    }
    Ok(sup)
}

/// Estimates `M_k`, `k = 1..q`, as `margin ×` the per-entry supremum of
/// `|Γ_k − Γ_{k+1}|_i / |x − x_dk|_j` over channel-`k` arguments differing
/// in coordinate `j` only.
///
/// Moving `x_dk` to `x` one coordinate at a time stays inside the box, so a
/// matrix dominating the single-coordinate secants everywhere bounds the
/// full difference. Each `(k, j)` shard draws from its own random
/// stream; raising `samples` only appends draws, so entries never decrease.
pub fn estimate_bounds<F: DelayedField + Sync>(
    field: &F,
    domain: &StateDomain,
    samples: usize,
    seed: u64,
    margin: f64,
) -> Result<Vec<Mat>> {
    domain.validate()?;
    let n = field.dim();
    let q = field.channels();
    if domain.dim() != n {
        return Err(Error::Dimension(format!("domain has dimension {}, field {n}", domain.dim())));
    }
    if domain.is_degenerate() {
        return Err(invalid("domain has zero volume"));
    }
    if !(margin >= 1.0) || !margin.is_finite() {
        return Err(invalid(format!("margin factor must be >= 1, got {margin}")));
    }
    let shards: Vec<(usize, usize)> = (1..=q).flat_map(|k| (0..n).map(move |j| (k, j))).collect();
    let columns = shards
        .par_iter()
        .map(|&(k, j)| ratio_shard(field, domain, k, j, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(q);
    for k in 0..q {
        let mut rows = vec![vec![0.0; n]; n];
        for j in 0..n {
            for (i, row) in rows.iter_mut().enumerate() {
                row[j] = margin * columns[k * n + j][i];
            }
        }
        out.push(Mat::from_rows(&rows)?);
    }
    Ok(out)
}

/// One sampled counterexample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    /// The delayed state of the audited channel, for channel bounds.
    pub delayed: Option<Vec<f64>>,
    /// Offending component, if the check is element-wise.
    pub row: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

impl Witness {
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub description: String,
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen, violations or not.
    pub worst_excess: f64,
    /// Worst violations, most severe first.
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub tolerance: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.total_violations() == 0
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Absolute tolerance scale for `lhs ≤ rhs` comparisons.
pub const AUDIT_TOLERANCE: f64 = 1e-9;
const MAX_WITNESSES: usize = 10;

struct Tally {
    samples: usize,
    violations: usize,
    worst: f64,
    witnesses: Vec<Witness>,
}

impl Tally {
    fn new() -> Self {
        Self { samples: 0, violations: 0, worst: f64::NEG_INFINITY, witnesses: Vec::new() }
    }

    fn test(&mut self, w: Witness) {
        let excess = w.excess();
        self.worst = self.worst.max(excess);
        if excess > AUDIT_TOLERANCE * (1.0 + w.rhs.abs()) {
            self.violations += 1;
            self.witnesses.push(w);
            if self.witnesses.len() > 4 * MAX_WITNESSES {
                self.trim();
            }
        }
    }

    fn trim(&mut self) {
        self.witnesses.sort_by(|a, b| b.excess().total_cmp(&a.excess()));
        self.witnesses.truncate(MAX_WITNESSES);
    }

    fn finish(mut self, name: &str, description: &str) -> AssumptionCheck {
        self.trim();
        AssumptionCheck {
            name: name.into(),
            description: description.into(),
            samples: self.samples,
            violations: self.violations,
            worst_excess: if self.samples == 0 { 0.0 } else { self.worst },
            witnesses: self.witnesses,
        }
    }
}

fn mat_abs_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    let m = m.as_dmatrix();
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j].abs()).sum()).collect()
}

/// Audits the bound matrices against `field` by sampling `domain`, in error
/// coordinates `e = x − equilibrium`:
///
/// * `growth`: `|f(x, …, x)| ≤ F ē`;
/// * `gradient`: `|2 P e| ≤ 2 W ē`;
/// * `decrease`: `2 eᵀ P f(x, …, x) ≤ −ēᵀ S ē`;
/// * `channel_k`: `|Γ_k − Γ_{k+1}| ≤ M_k |x − x_dk|`.
///
/// `p` defaults to `W`.
pub fn verify_bounds<F: DelayedField + Sync>(
    field: &F,
    equilibrium: &[f64],
    bounds: &SystemBounds,
    p: Option<&Mat>,
    domain: &StateDomain,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    domain.validate()?;
    let n = field.dim();
    let q = field.channels();
    if bounds.n() != n || bounds.q() != q || domain.dim() != n || equilibrium.len() != n {
        return Err(Error::Dimension(format!(
            "field has n = {n}, q = {q}; bounds n = {}, q = {}; domain {}; equilibrium {}",
            bounds.n(),
            bounds.q(),
            domain.dim(),
            equilibrium.len()
        )));
    }
    let p = p.unwrap_or(bounds.w());
    if p.rows() != n || p.cols() != n {
        return Err(Error::Dimension("P must be n x n".into()));
    }
    let pm = p.as_dmatrix();
    let sm = bounds.s().as_dmatrix();

    let lyapunov = (|| -> Result<[AssumptionCheck; 3]> {
        let mut rng = shard_rng(seed, 0);
        let (mut growth, mut gradient, mut decrease) = (Tally::new(), Tally::new(), Tally::new());
        let mut y = vec![0.0; n];
        let mut points: Vec<Vec<f64>> = grid_points(domain);
        points.extend((0..samples).map(|_| domain.sample(&mut rng)));
        for x in points {
            let e: Vec<f64> = x.iter().zip(equilibrium).map(|(a, b)| a - b).collect();
            field.eval_undelayed(0.0, &x, &mut y)?;
            let fe = mat_abs_vec(bounds.f(), &e);
            let we = mat_abs_vec(bounds.w(), &e);
            growth.samples += 1;
            gradient.samples += 1;
            decrease.samples += 1;
            let pe: Vec<f64> = (0..n).map(|i| (0..n).map(|j| pm[(i, j)] * e[j]).sum()).collect();
            for i in 0..n {
                growth.test(Witness { x: x.clone(), delayed: None, row: Some(i), lhs: y[i].abs(), rhs: fe[i] });
                gradient.test(Witness {
                    x: x.clone(),
                    delayed: None,
                    row: Some(i),
                    lhs: 2.0 * pe[i].abs(),
                    rhs: 2.0 * we[i],
                });
            }
            let vdot: f64 = 2.0 * (0..n).map(|i| pe[i] * y[i]).sum::<f64>();
            let ebar: Vec<f64> = e.iter().map(|v| v.abs()).collect();
            let sq: f64 = (0..n).map(|i| (0..n).map(|j| ebar[i] * sm[(i, j)] * ebar[j]).sum::<f64>()).sum();
            decrease.test(Witness { x, delayed: None, row: None, lhs: vdot, rhs: -sq });
        }
        Ok([
            growth.finish("growth", "|f(x,...,x)| <= F |x - x_eq|"),
            gradient.finish("gradient", "|2 P (x - x_eq)| <= 2 W |x - x_eq|"),
            decrease.finish("decrease", "2 (x - x_eq)' P f(x,...,x) <= -|x - x_eq|' S |x - x_eq|"),
        ])
    })()?;

    let channel_checks = (1..=q)
        .into_par_iter()
        .map(|k| -> Result<AssumptionCheck> {
            let mut rng = shard_rng(seed, k as u64);
            let mut tally = Tally::new();
            let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
            for _ in 0..samples {
                let x = domain.sample(&mut rng);
                let others: Vec<Vec<f64>> = (0..q).map(|_| domain.sample(&mut rng)).collect();
                let delayed: Vec<&[f64]> = others.iter().map(|v| v.as_slice()).collect();
                gamma(field, 0.0, &x, &delayed, k, &mut ga)?;
                gamma(field, 0.0, &x, &delayed, k + 1, &mut gb)?;
                let diff: Vec<f64> = x.iter().zip(&others[k - 1]).map(|(a, b)| a - b).collect();
                let rhs = mat_abs_vec(&bounds.m()[k - 1], &diff);
                tally.samples += 1;
                for i in 0..n {
                    tally.test(Witness {
                        x: x.clone(),
                        delayed: Some(others[k - 1].clone()),
                        row: Some(i),
                        lhs: (ga[i] - gb[i]).abs(),
                        rhs: rhs[i],
                    });
                }
            }
            Ok(tally.finish(&format!("channel_{k}"), &format!("|G_{k} - G_{}| <= M_{k} |x - x_d{k}|", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut checks: Vec<AssumptionCheck> = lyapunov.into_iter().collect();
    checks.extend(channel_checks);
    Ok(AssumptionReport { tolerance: AUDIT_TOLERANCE, checks })
}
