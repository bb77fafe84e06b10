//! Dense tableau simplex for `max 1ᵀy  s.t.  A y <= 1, y >= 0` with A > 0.
//!
//! The slack basis is feasible from the start, so no phase one is needed.
//! Entering and leaving variables follow Bland's smallest-index rule.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;

pub(crate) struct PackingSolution {
    /// Optimal primal y (length = columns of A).
    pub primal: Vec<f64>,
    /// Optimal dual prices of the `A y <= 1` rows.
    pub dual: Vec<f64>,
    pub objective: f64,
}

/// `a` is row-major with `rows * cols` entries, every entry > 0.
pub(crate) fn solve_packing(a: &[f64], rows: usize, cols: usize) -> Result<PackingSolution> {
    let vars = cols + rows;
    let width = vars + 1;
    let mut t = vec![0.0; (rows + 1) * width];
    for i in 0..rows {
        let line = &mut t[i * width..(i + 1) * width];
        line[..cols].copy_from_slice(&a[i * cols..(i + 1) * cols]);
        line[cols + i] = 1.0;
        line[vars] = 1.0;
    }
    // reduced costs of the objective row; rhs holds -objective
    for d in &mut t[rows * width..rows * width + cols] {
        *d = 1.0;
    }
    let mut basis: Vec<usize> = (cols..vars).collect();

    let max_iter = 50 * (rows + cols) + 1000;
    for _ in 0..max_iter {
        let obj = &t[rows * width..];
        let Some(enter) = (0..vars).find(|&j| obj[j] > PIVOT_TOL) else {
            return Ok(extract(&t, &basis, rows, cols, width));
        };

        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = t[i * width + enter];
            if coef <= PIVOT_TOL {
                continue;
            }
            let ratio = t[i * width + vars] / coef;
            leave = match leave {
                None => Some((i, ratio)),
                Some((r, best)) => {
                    let tie = (ratio - best).abs() <= 1e-12 * best.abs().max(1.0);
                    if ratio < best && !tie || tie && basis[i] < basis[r] {
                        Some((i, ratio))
                    } else {
                        Some((r, best))
                    }
                }
            };
        }
        // Bounded: every column of A is positive, so some row always qualifies.
        let Some((pivot_row, _)) = leave else {
            return Err(Error::SolverFailure("unbounded packing program".into()));
        };
        pivot(&mut t, width, rows + 1, pivot_row, enter);
        basis[pivot_row] = enter;
    }
    Err(Error::SolverFailure(format!("no optimum after {max_iter} pivots")))
}

fn pivot(t: &mut [f64], width: usize, height: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for v in &mut t[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_line: Vec<f64> = t[row * width..(row + 1) * width].to_vec();
    for r in 0..height {
        if r == row {
            continue;
        }
        let factor = t[r * width + col];
        if factor == 0.0 {
            continue;
        }
        let line = &mut t[r * width..(r + 1) * width];
        for (v, pv) in line.iter_mut().zip(&pivot_line) {
            *v -= factor * pv;
        }
        line[col] = 0.0;
    }
}

fn extract(t: &[f64], basis: &[usize], rows: usize, cols: usize, width: usize) -> PackingSolution {
    let vars = cols + rows;
    let mut primal = vec![0.0; cols];
    for (i, &b) in basis.iter().enumerate() {
        if b < cols {
            primal[b] = t[i * width + vars].max(0.0);
        }
    }
    let obj = &t[rows * width..];
    let dual = (0..rows).map(|i| (-obj[cols + i]).max(0.0)).collect();
    PackingSolution {
        primal,
        dual,
        objective: -obj[vars],
    }
}
