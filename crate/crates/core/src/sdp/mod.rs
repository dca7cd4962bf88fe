//! Block-diagonal semidefinite programs.
//!
//! A [`BlockSdp`] is a linear objective over a list of variable blocks, each
//! either a PSD matrix or a nonnegative diagonal (a vector of scalars), subject
//! to linear equalities `⟨C_k, X⟩ = b_k`. Coefficients are stored as symmetric
//! sparse entries with `i ≤ j`, following the SDPA convention: an entry
//! `(i, j, v)` with `i < j` contributes `2·v·X_ij` to the inner product.

mod sdpa;
mod solver;

pub use sdpa::{parse_sdpa, read_sdpa, to_sdpa_string, write_sdpa};
pub use solver::{solve, solve_f64, Precision, SolveOptions};

use crate::linalg::Mat;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Psd,
    NonnegDiag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub size: usize,
    pub kind: BlockKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry<S> {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equality<S> {
    pub label: String,
    pub entries: Vec<Entry<S>>,
    pub rhs: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Handle to a scalar variable stored in a diagonal block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScalarVar {
    pub block: usize,
    pub index: usize,
}

/// Handle to a PSD matrix block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MatrixVar {
    pub block: usize,
    pub size: usize,
}

/// A linear functional over the block variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr<S> {
    pub entries: Vec<Entry<S>>,
}

impl<S: Real> LinExpr<S> {
    pub fn new() -> Self {
        LinExpr {
            entries: Vec::new(),
        }
    }

    /// Adds `c · x`.
    pub fn scalar(mut self, v: ScalarVar, c: S) -> Self {
        if c != S::zero() {
            self.entries.push(Entry {
                block: v.block,
                i: v.index,
                j: v.index,
                value: c,
            });
        }
        self
    }

    /// Adds `c · X_ij` (a single matrix entry, not the symmetric pair).
    pub fn matrix_entry(mut self, v: MatrixVar, i: usize, j: usize, c: S) -> Self {
        if c == S::zero() {
            return self;
        }
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let value = if i == j { c } else { c * S::lit(0.5) };
        self.entries.push(Entry {
            block: v.block,
            i,
            j,
            value,
        });
        self
    }

    /// Adds `⟨C, X⟩` for a symmetric coefficient matrix `C`.
    pub fn inner(mut self, v: MatrixVar, c: &Mat<S>) -> Self {
        for i in 0..v.size {
            for j in i..v.size {
                let val = c[(i, j)];
                if val != S::zero() {
                    self.entries.push(Entry {
                        block: v.block,
                        i,
                        j,
                        value: val,
                    });
                }
            }
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSdp<S> {
    pub blocks: Vec<Block>,
    pub sense: Sense,
    pub objective: Vec<Entry<S>>,
    pub equalities: Vec<Equality<S>>,
    /// Names of scalar variables with their (block, index).
    pub scalar_names: Vec<(String, usize, usize)>,
    scalar_block: Option<usize>,
}

impl<S: Real> BlockSdp<S> {
    pub fn new(sense: Sense) -> Self {
        BlockSdp {
            blocks: Vec::new(),
            sense,
            objective: Vec::new(),
            equalities: Vec::new(),
            scalar_names: Vec::new(),
            scalar_block: None,
        }
    }

    pub fn add_block(&mut self, name: &str, size: usize, kind: BlockKind) -> usize {
        self.blocks.push(Block {
            name: name.to_string(),
            size,
            kind,
        });
        self.blocks.len() - 1
    }

    /// Declares a named nonnegative scalar in the shared diagonal block.
    pub fn scalar(&mut self, name: &str) -> ScalarVar {
        let block = match self.scalar_block {
            Some(b) => b,
            None => {
                let b = self.add_block("scalars", 0, BlockKind::NonnegDiag);
                self.scalar_block = Some(b);
                b
            }
        };
        let index = self.blocks[block].size;
        self.blocks[block].size += 1;
        self.scalar_names.push((name.to_string(), block, index));
        ScalarVar { block, index }
    }

    pub fn psd(&mut self, name: &str, size: usize) -> MatrixVar {
        let block = self.add_block(name, size, BlockKind::Psd);
        MatrixVar { block, size }
    }

    pub fn find_scalar(&self, name: &str) -> Option<ScalarVar> {
        self.scalar_names
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, block, index)| ScalarVar {
                block: *block,
                index: *index,
            })
    }

    pub fn find_matrix(&self, name: &str) -> Option<MatrixVar> {
        self.blocks
            .iter()
            .position(|b| b.name == name && b.kind == BlockKind::Psd)
            .map(|block| MatrixVar {
                block,
                size: self.blocks[block].size,
            })
    }

    pub fn set_objective(&mut self, e: LinExpr<S>) {
        self.objective = e.entries;
    }

    pub fn constrain(&mut self, label: &str, e: LinExpr<S>, rhs: S) {
        self.equalities.push(Equality {
            label: label.to_string(),
            entries: e.entries,
            rhs,
        });
    }

    /// Total number of scalar unknowns (svec length summed over blocks).
    pub fn dimension(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Psd => b.size * (b.size + 1) / 2,
                BlockKind::NonnegDiag => b.size,
            })
            .sum()
    }

    /// Checks indices and diagonal-block entries.
    pub fn validate(&self) -> Result<(), String> {
        let check = |e: &Entry<S>, what: &str| -> Result<(), String> {
            let b = self
                .blocks
                .get(e.block)
                .ok_or_else(|| format!("{what}: unknown block {}", e.block))?;
            if e.i > e.j || e.j >= b.size {
                return Err(format!(
                    "{what}: entry ({}, {}) outside block {} of size {}",
                    e.i, e.j, e.block, b.size
                ));
            }
            if b.kind == BlockKind::NonnegDiag && e.i != e.j {
                return Err(format!(
                    "{what}: off-diagonal entry in diagonal block {}",
                    e.block
                ));
            }
            if !e.value.is_finite() {
                return Err(format!("{what}: non-finite coefficient"));
            }
            Ok(())
        };
        for e in &self.objective {
            check(e, "objective")?;
        }
        for eq in &self.equalities {
            for e in &eq.entries {
                check(e, &eq.label)?;
            }
            if !eq.rhs.is_finite() {
                return Err(format!("{}: non-finite right-hand side", eq.label));
            }
        }
        Ok(())
    }

    /// Evaluates a list of entries at a point given per block.
    pub fn evaluate(&self, entries: &[Entry<S>], point: &[BlockValue<S>]) -> S {
        let mut acc = S::zero();
        for e in entries {
            let v = match &point[e.block] {
                BlockValue::Diag(d) => d[e.i],
                BlockValue::Matrix(m) => {
                    if e.i == e.j {
                        m[(e.i, e.j)]
                    } else {
                        m[(e.i, e.j)] + m[(e.j, e.i)]
                    }
                }
            };
            acc = acc + e.value * v;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalTrouble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Objective at the primal iterate, in the program's own sense.
    pub primal_objective: f64,
    /// Dual objective, in the program's own sense.
    pub dual_objective: f64,
    /// Complementarity ⟨X, S⟩ at the returned point.
    pub gap: f64,
    /// `gap / (1 + |primal_objective|)`; the stopping test uses this quantity.
    pub relative_gap: f64,
    pub iterations: usize,
    /// ‖A x − b‖ / (1 + ‖b‖).
    pub primal_residual: f64,
    /// ‖Aᵀy + s − c‖ / (1 + ‖c‖).
    pub dual_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockValue<S> {
    Diag(Vec<S>),
    Matrix(Mat<S>),
}

#[derive(Clone, Debug)]
pub struct SdpSolution<S> {
    pub outcome: SolveOutcome,
    /// Primal values per block.
    pub primal: Vec<BlockValue<S>>,
    /// Dual slack per block.
    pub slack: Vec<BlockValue<S>>,
    /// Multipliers of the equalities.
    pub multipliers: Vec<S>,
}

impl<S: Copy> Entry<S> {
    fn map<T>(&self, f: &impl Fn(S) -> T) -> Entry<T> {
        Entry {
            block: self.block,
            i: self.i,
            j: self.j,
            value: f(self.value),
        }
    }
}

impl<S: Copy> BlockSdp<S> {
    /// The same program with every coefficient converted by `f`.
    pub fn map<T>(&self, f: impl Fn(S) -> T) -> BlockSdp<T> {
        BlockSdp {
            blocks: self.blocks.clone(),
            sense: self.sense,
            objective: self.objective.iter().map(|e| e.map(&f)).collect(),
            equalities: self
                .equalities
                .iter()
                .map(|q| Equality {
                    label: q.label.clone(),
                    entries: q.entries.iter().map(|e| e.map(&f)).collect(),
                    rhs: f(q.rhs),
                })
                .collect(),
            scalar_names: self.scalar_names.clone(),
            scalar_block: self.scalar_block,
        }
    }
}

impl<S: Copy> BlockValue<S> {
    pub fn map<T>(&self, f: impl Fn(S) -> T) -> BlockValue<T> {
        match self {
            BlockValue::Diag(d) => BlockValue::Diag(d.iter().map(|v| f(*v)).collect()),
            BlockValue::Matrix(m) => BlockValue::Matrix(m.map(f)),
        }
    }
}

impl<S: Copy> SdpSolution<S> {
    pub fn map<T>(&self, f: impl Fn(S) -> T) -> SdpSolution<T> {
        SdpSolution {
            outcome: self.outcome.clone(),
            primal: self.primal.iter().map(|b| b.map(&f)).collect(),
            slack: self.slack.iter().map(|b| b.map(&f)).collect(),
            multipliers: self.multipliers.iter().map(|v| f(*v)).collect(),
        }
    }
}

impl<S: Real> SdpSolution<S> {
    pub fn scalar(&self, v: ScalarVar) -> S {
        match &self.primal[v.block] {
            BlockValue::Diag(d) => d[v.index],
            BlockValue::Matrix(_) => panic!("block {} is not diagonal", v.block),
        }
    }

    pub fn matrix(&self, v: MatrixVar) -> &Mat<S> {
        match &self.primal[v.block] {
            BlockValue::Matrix(m) => m,
            BlockValue::Diag(_) => panic!("block {} is not a matrix", v.block),
        }
    }
}
