//! SDPA sparse (`.dat-s`) export and a minimal reader.
//!
//! SDPA poses `minimize cᵀx  s.t.  Σ xᵢFᵢ − F₀ ⪰ 0`. Mapping:
//!
//! * `⪰ 0` block `C + Σ xᵢBᵢ`: `Fᵢ = Bᵢ`, `F₀ = −C`;
//! * `≺ 0` block: negated and shifted, `−C − Σ xᵢBᵢ − δI ⪰ 0`, so `Fᵢ = −Bᵢ`,
//!   `F₀ = C + δI`;
//! * every positive diagonal scalar `xᵢ − δ ≥ 0` becomes one entry of a
//!   trailing diagonal block (negative size in the block-structure line);
//! * a maximised objective `c` is written as `−c`.
//!
//! The box on free scalars used internally by the solver is not exported.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{BlockSign, LmiProblem};
use crate::error::{Error, Result};

pub const DEFAULT_STRICTNESS_SHIFT: f64 = 1e-6;

fn clean(v: f64) -> f64 {
    // avoid "-0" in the output
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Serialises `problem` as SDPA sparse text.
pub fn export_sdpa(problem: &LmiProblem, strictness_shift: f64) -> String {
    let m = problem.total_scalars();
    let positive = problem.layout.positive_scalars();
    let mut sizes: Vec<i64> = problem.constraints.iter().map(|b| b.dim as i64).collect();
    if !positive.is_empty() {
        sizes.push(-(positive.len() as i64));
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "* LMI feasibility export: strict (< 0) blocks negated and shifted by {strictness_shift}; \
         positive diagonal scalars x >= {strictness_shift} in the trailing diagonal block"
    );
    let _ = writeln!(out, "{m}");
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(out, "{}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "));
    let objective: Vec<String> = match &problem.objective {
        Some(c) => c.iter().map(|v| clean(-v).to_string()).collect(),
        None => vec!["0".to_string(); m],
    };
    let _ = writeln!(out, "{}", objective.join(" "));

    // (matno, blkno, i, j, value); matno 0 is F0.
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (bi, block) in problem.constraints.iter().enumerate() {
        let blkno = bi + 1;
        let (flip, shift) = match block.sign {
            BlockSign::Psd => (1.0, 0.0),
            BlockSign::Nd => (-1.0, strictness_shift),
        };
        let c = block.constant.as_dmatrix();
        for i in 0..block.dim {
            for j in i..block.dim {
                // F0 = -flip * C + shift * I
                let mut v = -flip * c[(i, j)];
                if i == j {
                    v += shift;
                }
                if v != 0.0 {
                    entries.push((0, blkno, i + 1, j + 1, v));
                }
            }
        }
        for (idx, basis) in &block.terms {
            let b = basis.as_dmatrix();
            for i in 0..block.dim {
                for j in i..block.dim {
                    let v = flip * b[(i, j)];
                    if v != 0.0 {
                        entries.push((idx + 1, blkno, i + 1, j + 1, v));
                    }
                }
            }
        }
    }
    if !positive.is_empty() {
        let blkno = problem.constraints.len() + 1;
        for (pos, &idx) in positive.iter().enumerate() {
            if strictness_shift != 0.0 {
                entries.push((0, blkno, pos + 1, pos + 1, strictness_shift));
            }
            entries.push((idx + 1, blkno, pos + 1, pos + 1, 1.0));
        }
    }
    entries.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    for (matno, blkno, i, j, v) in entries {
        let _ = writeln!(out, "{matno} {blkno} {i} {j} {}", clean(v));
    }
    out
}

/// A parsed SDPA sparse problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaProblem {
    pub m: usize,
    /// Block sizes as written; negative for diagonal blocks.
    pub block_sizes: Vec<i64>,
    pub objective: Vec<f64>,
    /// `matrices[k][b]` is F_k restricted to block `b` (dense, symmetric).
    pub matrices: Vec<Vec<DMatrix<f64>>>,
}

impl SdpaProblem {
    pub fn block_dims(&self) -> Vec<usize> {
        self.block_sizes.iter().map(|s| s.unsigned_abs() as usize).collect()
    }

    /// `Σ xᵢFᵢ − F₀` per block.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        if x.len() != self.m {
            return Err(Error::Dimension(format!("point has length {}, SDPA m = {}", x.len(), self.m)));
        }
        Ok((0..self.block_sizes.len())
            .map(|b| {
                let mut acc = -self.matrices[0][b].clone();
                for (i, xi) in x.iter().enumerate() {
                    acc += &self.matrices[i + 1][b] * *xi;
                }
                acc
            })
            .collect())
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn numbers(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')')
        .filter(|t| !t.is_empty())
}

/// Reads the subset of SDPA sparse format produced by [`export_sdpa`].
pub fn parse_sdpa(text: &str) -> Result<SdpaProblem> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('*') && !l.starts_with('"'));

    let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(0, format!("missing {what}")));

    let (ln, l) = next("m")?;
    let m: usize = numbers(l).next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln, "bad m"))?;
    let (ln, l) = next("nblocks")?;
    let nblocks: usize =
        numbers(l).next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln, "bad block count"))?;
    // Empty lines are skipped, so zero blocks / zero scalars consume no line.
    let block_sizes: Vec<i64> = if nblocks == 0 {
        Vec::new()
    } else {
        let (ln, l) = next("block structure")?;
        let sizes: Vec<i64> = numbers(l)
            .take(nblocks)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad block size `{t}`"))))
            .collect::<Result<_>>()?;
        if sizes.len() != nblocks || sizes.contains(&0) {
            return Err(parse_err(ln, "block structure does not match block count"));
        }
        sizes
    };
    let objective: Vec<f64> = if m == 0 {
        Vec::new()
    } else {
        let (ln, l) = next("objective")?;
        let obj: Vec<f64> = numbers(l)
            .take(m)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad objective entry `{t}`"))))
            .collect::<Result<_>>()?;
        if obj.len() != m {
            return Err(parse_err(ln, format!("objective has {} entries, expected {m}", obj.len())));
        }
        obj
    };

    let dims: Vec<usize> = block_sizes.iter().map(|s| s.unsigned_abs() as usize).collect();
    let mut matrices: Vec<Vec<DMatrix<f64>>> =
        (0..=m).map(|_| dims.iter().map(|&d| DMatrix::zeros(d, d)).collect()).collect();

    for (ln, l) in lines {
        let toks: Vec<&str> = numbers(l).collect();
        if toks.len() != 5 {
            return Err(parse_err(ln, "entry must have 5 fields"));
        }
        let idx = |k: usize| toks[k].parse::<usize>().map_err(|_| parse_err(ln, format!("bad index `{}`", toks[k])));
        let (matno, blkno, i, j) = (idx(0)?, idx(1)?, idx(2)?, idx(3)?);
        let v: f64 = toks[4].parse().map_err(|_| parse_err(ln, format!("bad value `{}`", toks[4])))?;
        if matno > m || blkno == 0 || blkno > nblocks {
            return Err(parse_err(ln, "matrix or block number out of range"));
        }
        let d = dims[blkno - 1];
        if i == 0 || j == 0 || i > d || j > d {
            return Err(parse_err(ln, "entry position out of range"));
        }
        if block_sizes[blkno - 1] < 0 && i != j {
            return Err(parse_err(ln, "off-diagonal entry in a diagonal block"));
        }
        let mat = &mut matrices[matno][blkno - 1];
        mat[(i - 1, j - 1)] = v;
        mat[(j - 1, i - 1)] = v;
    }

    Ok(SdpaProblem { m, block_sizes, objective, matrices })
}
