//! Two-player zero-sum matrix games: exact solving by linear programming and
//! value-preserving elimination of row-player actions.

mod reduce;
mod simplex;

use std::fmt;

pub use reduce::{
    affine_decompose, independent_rows, reduce_rows, Certificate, Decomposition, Degeneracy, Group, Rejection,
    ReductionReport, Removal,
};

use crate::error::{Error, Result};

/// Payoffs to the (maximizing) row player, stored row-major.
#[derive(Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::InvalidModel(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::from_flat(rows.len(), cols, rows.concat())
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        assert_eq!(data.len(), rows * cols, "flat payoff data has the wrong length");
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Sub-game keeping only `keep` (in the given order).
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        assert!(!keep.is_empty(), "cannot select zero rows");
        let data = keep.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self {
            rows: keep.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v + by).collect(),
        }
    }

    /// `pᵀO` for a row mixture `p`.
    pub fn row_mix(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &w) in self.iter_rows().zip(p) {
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `O q` for a column mixture `q`.
    pub fn col_mix(&self, q: &[f64]) -> Vec<f64> {
        self.iter_rows()
            .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl fmt::Debug for PayoffMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter_rows()).finish()
    }
}

/// Optimal mixed strategies and the value of a zero-sum game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    /// Row (maximizing) player's mixed strategy.
    pub row_strategy: Vec<f64>,
    /// Column (minimizing) player's mixed strategy.
    pub col_strategy: Vec<f64>,
    pub value: f64,
}

impl GameSolution {
    /// Worst-case payoff the row strategy guarantees: `min_j (p1ᵀO)_j`.
    pub fn maximin(&self, game: &PayoffMatrix) -> f64 {
        game.row_mix(&self.row_strategy).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Best payoff the row player can force against the column strategy.
    pub fn minimax(&self, game: &PayoffMatrix) -> f64 {
        game.col_mix(&self.col_strategy).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn duality_gap(&self, game: &PayoffMatrix) -> f64 {
        self.minimax(game) - self.maximin(game)
    }
}

/// Solve a zero-sum game exactly.
///
/// Entries are shifted so the smallest is 1, then `max 1ᵀy s.t. O'y <= 1`
/// is solved by simplex; the value is `1/Σy` minus the shift and both
/// strategies come out of the same optimal tableau.
pub fn solve(game: &PayoffMatrix) -> Result<GameSolution> {
    let shift = 1.0 - game.min_entry();
    let positive: Vec<f64> = game.data.iter().map(|v| v + shift).collect();
    let lp = simplex::solve_packing(&positive, game.rows, game.cols)?;
    if !(lp.objective > 0.0) {
        return Err(Error::SolverFailure(format!("degenerate objective {}", lp.objective)));
    }
    let value = 1.0 / lp.objective - shift;
    Ok(GameSolution {
        row_strategy: normalize(lp.dual)?,
        col_strategy: normalize(lp.primal)?,
        value,
    })
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::SolverFailure("optimal strategy has zero mass".into()));
    }
    for x in &mut v {
        *x /= sum;
    }
    Ok(v)
}

/// Value of the game, discarding the strategies.
pub fn value(game: &PayoffMatrix) -> Result<f64> {
    solve(game).map(|s| s.value)
}
