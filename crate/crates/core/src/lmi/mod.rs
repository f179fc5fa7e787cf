//! Block-structured decision variables and affine symmetric-matrix constraints.
//!
//! A problem is a [`VariableLayout`] (named matrix-valued variables flattened
//! into a scalar vector) plus a list of [`AffineBlock`] constraints of the form
//! `C + Σ zᵢ Bᵢ ⪰ 0` or `≺ 0`. Bases are stored densely.

mod sdpa;

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{Mat, SymMat};

pub use sdpa::{export_sdpa, parse_sdpa, SdpaProblem, DEFAULT_STRICTNESS_SHIFT};

/// Structure of a matrix-valued decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Diagonal matrix with strictly positive diagonal entries.
    DiagonalPositive,
    /// Symmetric matrix, upper triangle stored row-major.
    SymmetricFree,
    /// Unstructured square matrix, row-major.
    FullFree,
}

impl VarKind {
    pub fn scalar_count(self, dim: usize) -> usize {
        match self {
            VarKind::DiagonalPositive => dim,
            VarKind::SymmetricFree => dim * (dim + 1) / 2,
            VarKind::FullFree => dim * dim,
        }
    }
}

/// One named variable occupying `kind.scalar_count(dim)` consecutive scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub dim: usize,
    pub offset: usize,
}

impl VarBlock {
    pub fn scalar_count(&self) -> usize {
        self.kind.scalar_count(self.dim)
    }

    /// Scalar index feeding entry `(i, j)` of the variable matrix, if any.
    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        assert!(i < self.dim && j < self.dim, "entry ({i},{j}) outside {}x{}", self.dim, self.dim);
        match self.kind {
            VarKind::DiagonalPositive => (i == j).then_some(self.offset + i),
            VarKind::SymmetricFree => {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                // rows 0..a hold dim + (dim-1) + ... + (dim-a+1) entries
                Some(self.offset + a * self.dim - a * (a.saturating_sub(1)) / 2 + (b - a))
            }
            VarKind::FullFree => Some(self.offset + i * self.dim + j),
        }
    }

    /// The variable's matrix value at `point`.
    pub fn value(&self, point: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.index(i, j).map_or(0.0, |s| point[s]))
    }
}

/// Ordered collection of named variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VariableLayout {
    blocks: Vec<VarBlock>,
    total_scalars: usize,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a variable and returns a copy of its descriptor.
    pub fn add(&mut self, name: impl Into<String>, kind: VarKind, dim: usize) -> Result<VarBlock> {
        let name = name.into();
        if dim == 0 {
            return Err(invalid(format!("variable `{name}` has zero dimension")));
        }
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(invalid(format!("duplicate variable name `{name}`")));
        }
        let block = VarBlock { name, kind, dim, offset: self.total_scalars };
        self.total_scalars += block.scalar_count();
        self.blocks.push(block.clone());
        Ok(block)
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn total_scalars(&self) -> usize {
        self.total_scalars
    }

    /// Scalars that must stay strictly positive (diagonals of positive diagonal variables).
    pub fn positive_scalars(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.kind == VarKind::DiagonalPositive)
            .flat_map(|b| b.offset..b.offset + b.dim)
            .collect()
    }

    fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut expected_offset = 0;
        for b in &self.blocks {
            if !seen.insert(b.name.as_str()) {
                out.push(format!("variable name `{}` is not unique", b.name));
            }
            if b.offset != expected_offset {
                out.push(format!("variable `{}` starts at scalar {} (expected {expected_offset})", b.name, b.offset));
            }
            expected_offset += b.scalar_count();
        }
        if expected_offset != self.total_scalars {
            out.push(format!(
                "total_scalars is {} but the variables account for {expected_offset}",
                self.total_scalars
            ));
        }
        out
    }
}

/// Required sign of an affine block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSign {
    /// Positive semidefinite, `⪰ 0`.
    Psd,
    /// Negative definite, `≺ 0`.
    Nd,
}

/// `constant + Σ point[scalar]·basis` constrained to a sign.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub name: String,
    pub dim: usize,
    pub sign: BlockSign,
    pub constant: SymMat,
    pub terms: Vec<(usize, SymMat)>,
}

impl AffineBlock {
    pub fn evaluate(&self, point: &[f64]) -> Result<SymMat> {
        evaluate_block(self, point)
    }
}

/// Evaluates a block at a point of the full scalar vector.
pub fn evaluate_block(block: &AffineBlock, point: &[f64]) -> Result<SymMat> {
    if let Some(&(idx, _)) = block.terms.iter().find(|(idx, _)| *idx >= point.len()) {
        return Err(Error::Dimension(format!(
            "block `{}` references scalar {idx} but the point has length {}",
            block.name,
            point.len()
        )));
    }
    let mut acc = block.constant.as_dmatrix().clone();
    for (idx, basis) in &block.terms {
        if basis.dim() != acc.nrows() {
            return Err(Error::Dimension(format!("basis of scalar {idx} in block `{}` has wrong dim", block.name)));
        }
        acc += basis.as_dmatrix() * point[*idx];
    }
    SymMat::from_dmatrix(acc)
}

/// Incremental construction of an [`AffineBlock`].
#[derive(Debug, Clone)]
pub struct AffineBlockBuilder {
    name: String,
    sign: BlockSign,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineBlockBuilder {
    pub fn new(name: impl Into<String>, dim: usize, sign: BlockSign) -> Self {
        Self { name: name.into(), sign, constant: DMatrix::zeros(dim, dim), terms: BTreeMap::new() }
    }

    fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn basis(&mut self, scalar: usize) -> &mut DMatrix<f64> {
        let dim = self.dim();
        self.terms.entry(scalar).or_insert_with(|| DMatrix::zeros(dim, dim))
    }

    /// Adds `value` at `(i, j)` only.
    pub fn add_term_raw(&mut self, scalar: usize, i: usize, j: usize, value: f64) {
        self.basis(scalar)[(i, j)] += value;
    }

    /// Adds `value` at `(i, j)` and at `(j, i)`; a diagonal entry receives `2·value`.
    pub fn add_term_mirrored(&mut self, scalar: usize, i: usize, j: usize, value: f64) {
        let b = self.basis(scalar);
        b[(i, j)] += value;
        b[(j, i)] += value;
    }

    /// Places the matrix `m` at block position `(row, col)` and `mᵀ` at `(col, row)`.
    /// On the diagonal (`row == col`) `m` must be symmetric and is placed once.
    pub fn add_constant_block(&mut self, row: usize, col: usize, m: &DMatrix<f64>) {
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                self.constant[(row + a, col + b)] += m[(a, b)];
                if row != col {
                    self.constant[(col + b, row + a)] += m[(a, b)];
                }
            }
        }
    }

    /// Like [`Self::add_constant_block`] but into the basis of `scalar`.
    pub fn add_term_block(&mut self, scalar: usize, row: usize, col: usize, m: &DMatrix<f64>) {
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                if row == col {
                    self.add_term_raw(scalar, row + a, col + b, m[(a, b)]);
                } else {
                    self.add_term_mirrored(scalar, row + a, col + b, m[(a, b)]);
                }
            }
        }
    }

    /// Places `coeff·V` for the variable `var` at block position `(row, col)`,
    /// mirrored like [`Self::add_constant_block`].
    pub fn add_variable(&mut self, var: &VarBlock, row: usize, col: usize, coeff: f64) {
        for a in 0..var.dim {
            for b in 0..var.dim {
                if let Some(s) = var.index(a, b) {
                    if row == col {
                        self.add_term_raw(s, row + a, col + b, coeff);
                    } else {
                        self.add_term_mirrored(s, row + a, col + b, coeff);
                    }
                }
            }
        }
    }

    pub fn build(self) -> Result<AffineBlock> {
        let dim = self.dim();
        let constant = SymMat::from_dmatrix(self.constant)?;
        let terms = self
            .terms
            .into_iter()
            .filter(|(_, b)| b.iter().any(|&v| v != 0.0))
            .map(|(s, b)| Ok((s, SymMat::from_dmatrix(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AffineBlock { name: self.name, dim, sign: self.sign, constant, terms })
    }
}

/// Variables, constraints and an optional linear objective (maximised).
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub layout: VariableLayout,
    pub constraints: Vec<AffineBlock>,
    /// Dense coefficient vector over all scalars.
    pub objective: Option<Vec<f64>>,
}

impl LmiProblem {
    pub fn new(layout: VariableLayout) -> Self {
        Self { layout, constraints: Vec::new(), objective: None }
    }

    pub fn with_objective(mut self, objective: Vec<f64>) -> Self {
        self.objective = Some(objective);
        self
    }

    pub fn push(&mut self, block: AffineBlock) {
        self.constraints.push(block);
    }

    pub fn total_scalars(&self) -> usize {
        self.layout.total_scalars()
    }

    /// Evaluates every constraint block at `point`.
    pub fn evaluate(&self, point: &[f64]) -> Result<Vec<SymMat>> {
        if point.len() != self.total_scalars() {
            return Err(Error::Dimension(format!(
                "point has length {}, problem has {} scalars",
                point.len(),
                self.total_scalars()
            )));
        }
        self.constraints.iter().map(|c| evaluate_block(c, point)).collect()
    }

    pub fn objective_value(&self, point: &[f64]) -> Option<f64> {
        self.objective.as_ref().map(|c| c.iter().zip(point).map(|(a, b)| a * b).sum())
    }

    /// Human-readable list of invariant violations; empty iff the problem is well formed.
    pub fn validate(&self) -> Vec<String> {
        validate(self)
    }

    /// Returns an error carrying every diagnostic when the problem is malformed.
    pub fn ensure_valid(&self) -> Result<()> {
        let diags = self.validate();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(invalid(diags.join("; ")))
        }
    }
}

pub fn validate(problem: &LmiProblem) -> Vec<String> {
    let mut out = problem.layout.diagnostics();
    let n = problem.total_scalars();
    for block in &problem.constraints {
        if block.constant.dim() != block.dim {
            out.push(format!(
                "block `{}`: constant is {}x{} but the block dim is {}",
                block.name,
                block.constant.dim(),
                block.constant.dim(),
                block.dim
            ));
        }
        for (idx, basis) in &block.terms {
            if *idx >= n {
                out.push(format!("block `{}`: term references scalar {idx} but the layout has {n}", block.name));
            }
            if basis.dim() != block.dim {
                out.push(format!(
                    "block `{}`: basis of scalar {idx} is {}x{} but the block dim is {}",
                    block.name,
                    basis.dim(),
                    basis.dim(),
                    block.dim
                ));
            }
        }
    }
    if let Some(obj) = &problem.objective {
        if obj.len() != n {
            out.push(format!("objective has {} coefficients but the layout has {n} scalars", obj.len()));
        }
        if obj.iter().any(|v| !v.is_finite()) {
            out.push("objective has non-finite coefficients".to_string());
        }
    }
    out
}

/// Convenience for tests and builders: a `SymMat` from nested rows.
pub fn sym_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<SymMat> {
    SymMat::new(Mat::from_rows(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_var_problem() -> (LmiProblem, VarBlock) {
        let mut layout = VariableLayout::new();
        let x = layout.add("x", VarKind::FullFree, 1).unwrap();
        let mut b = AffineBlockBuilder::new("box", 2, BlockSign::Psd);
        b.add_constant_block(1, 1, &DMatrix::from_element(1, 1, 1.0));
        b.add_term_raw(0, 0, 0, 1.0);
        b.add_term_raw(0, 1, 1, -1.0);
        let mut p = LmiProblem::new(layout);
        p.push(b.build().unwrap());
        (p, x)
    }

    #[test]
    fn layout_scalar_counts() {
        let mut l = VariableLayout::new();
        l.add("R", VarKind::DiagonalPositive, 4).unwrap();
        l.add("X11", VarKind::SymmetricFree, 4).unwrap();
        l.add("X12", VarKind::FullFree, 4).unwrap();
        assert_eq!(l.total_scalars(), 4 + 10 + 16);
        assert!(l.add("R", VarKind::FullFree, 2).is_err());
        assert_eq!(l.positive_scalars(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn symmetric_indexing_covers_upper_triangle_once() {
        let mut l = VariableLayout::new();
        l.add("pad", VarKind::FullFree, 1).unwrap();
        let s = l.add("S", VarKind::SymmetricFree, 4).unwrap();
        let mut seen = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                seen.push(s.index(i, j).unwrap());
                assert_eq!(s.index(i, j), s.index(j, i));
            }
        }
        assert_eq!(seen, (1..11).collect::<Vec<_>>());
    }

    #[test]
    fn evaluate_zero_point_gives_constant() {
        let (p, _) = one_var_problem();
        let v = evaluate_block(&p.constraints[0], &[0.0]).unwrap();
        assert_eq!(v, p.constraints[0].constant);
    }

    #[test]
    fn evaluate_unit_point_adds_basis() {
        let (p, _) = one_var_problem();
        let v = evaluate_block(&p.constraints[0], &[1.0]).unwrap();
        assert_eq!(v, SymMat::diag(&[1.0, 0.0]).unwrap());
    }

    #[test]
    fn evaluate_rejects_short_point() {
        let (p, _) = one_var_problem();
        assert!(evaluate_block(&p.constraints[0], &[]).is_err());
        assert!(p.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn validate_reports_each_defect() {
        let (p, _) = one_var_problem();
        assert!(p.validate().is_empty());

        let mut bad_index = p.clone();
        bad_index.constraints[0].terms.push((5, SymMat::identity(2)));
        assert_eq!(bad_index.validate().len(), 1);

        let mut bad_dim = p.clone();
        bad_dim.constraints[0].terms[0].1 = SymMat::identity(3);
        assert_eq!(bad_dim.validate().len(), 1);

        let bad_obj = p.with_objective(vec![1.0, 2.0]);
        assert_eq!(bad_obj.validate().len(), 1);
    }

    #[test]
    fn variable_placement_mirrors_off_diagonal_blocks() {
        let mut l = VariableLayout::new();
        let x = l.add("X", VarKind::FullFree, 2).unwrap();
        let mut b = AffineBlockBuilder::new("b", 4, BlockSign::Psd);
        b.add_variable(&x, 0, 2, 1.0);
        let block = b.build().unwrap();
        let point = [1.0, 2.0, 3.0, 4.0];
        let v = block.evaluate(&point).unwrap();
        // X = [[1,2],[3,4]] in the (1,2) position, Xᵀ in (2,1).
        assert_eq!(v.get(0, 3), 2.0);
        assert_eq!(v.get(3, 0), 2.0);
        assert_eq!(v.get(1, 2), 3.0);
        assert_eq!(v.get(0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn evaluation_is_affine(
            p in proptest::collection::vec(-10.0..10.0f64, 3),
            q in proptest::collection::vec(-10.0..10.0f64, 3),
        ) {
            let mut l = VariableLayout::new();
            let s = l.add("S", VarKind::SymmetricFree, 2).unwrap();
            let mut b = AffineBlockBuilder::new("b", 3, BlockSign::Nd);
            b.add_constant_block(0, 0, &DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, 3.0]));
            b.add_variable(&s, 0, 0, 2.0);
            b.add_variable(&s, 1, 1, -1.0);
            let block = b.build().unwrap();
            let c = block.constant.as_dmatrix();
            let pq: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
            let lhs = block.evaluate(&pq).unwrap().as_dmatrix() - c;
            let rhs = (block.evaluate(&p).unwrap().as_dmatrix() - c) + (block.evaluate(&q).unwrap().as_dmatrix() - c);
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
