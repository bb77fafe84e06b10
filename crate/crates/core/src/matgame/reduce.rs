//! Row-player action elimination.
//!
//! Rows are expressed over a maximal linearly independent set of rows (the
//! basis). A row whose coefficients sum to 1 is an affine combination of the
//! basis (Group I); a sum below 1 makes it Group II; above 1 (Group III) the
//! basis row with the largest positive coefficient is swapped out instead and
//! removed as Group II. One row is removed per pass and the basis is then
//! re-derived, so at most `cols` rows survive.
//!
//! Affine removals with negative coefficients are not value-preserving in
//! general (`[[1,4],[2,3],[3,2]]`: the last row is `2·r1 − r0`, yet dropping it
//! lowers the value from 2.5 to 2). A removal is therefore applied only when
//! it is certified, either because the row is dominated by a sub-stochastic
//! mixture of the remaining rows, or because re-solving the smaller game
//! reproduces the original value. Uncertified candidates are reported in
//! [`ReductionReport::rejected`]. If no candidate survives while more than
//! `cols` rows remain, the rows outside the support of an optimal basic row
//! strategy are dropped.

use std::collections::HashSet;

use super::{solve, value, PayoffMatrix};
use crate::error::Result;

/// Relative pivot threshold for the rank-revealing basis scan.
const BASIS_THRESHOLD: f64 = 1e-9;
/// `|Σλ − 1|` below this is flagged as a (near-)exact affine relation.
const DEGENERACY_BAND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    /// `target ≈ Σ coefficients[k] · basis[k]` with the given residual norm.
    Combination { coefficients: Vec<f64>, residual: f64 },
    Independent { residual: f64 },
}

impl Decomposition {
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            Decomposition::Combination { coefficients, .. } => Some(coefficients),
            Decomposition::Independent { .. } => None,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            Decomposition::Combination { residual, .. } | Decomposition::Independent { residual } => *residual,
        }
    }
}

/// Incremental modified Gram–Schmidt factorization of a column set.
struct Orthogonalizer {
    q: Vec<Vec<f64>>,
    /// `r[k]` holds the coefficients of accepted column k against q[0..=k].
    r: Vec<Vec<f64>>,
}

impl Orthogonalizer {
    fn new() -> Self {
        Self { q: Vec::new(), r: Vec::new() }
    }

    /// Project out the current span (twice, for stability). Returns the
    /// residual vector and the projection coefficients.
    fn project(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut w = v.to_vec();
        let mut coef = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (c, q) in coef.iter_mut().zip(&self.q) {
                let d = dot(q, &w);
                *c += d;
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= d * qi;
                }
            }
        }
        (w, coef)
    }

    /// Adds `v` if it is independent of the span; returns whether it was added.
    fn push(&mut self, v: &[f64]) -> bool {
        let (w, mut coef) = self.project(v);
        let norm = dot(&w, &w).sqrt();
        if norm <= BASIS_THRESHOLD * dot(v, v).sqrt().max(1.0) {
            return false;
        }
        coef.push(norm);
        self.q.push(w.into_iter().map(|x| x / norm).collect());
        self.r.push(coef);
        true
    }

    /// Least-squares coefficients of `t` over the accepted columns.
    fn solve(&self, t: &[f64]) -> Vec<f64> {
        let (_, c) = self.project(t);
        let k = self.q.len();
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = c[i];
            for (j, xj) in x.iter().enumerate().skip(i + 1) {
                s -= self.r[j][i] * xj;
            }
            x[i] = s / self.r[i][i];
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy rank-revealing scan: rows of `candidates` (in order) that are
/// linearly independent of the rows accepted before them.
pub fn independent_rows(game: &PayoffMatrix, candidates: &[usize]) -> Vec<usize> {
    let mut span = Orthogonalizer::new();
    candidates.iter().copied().filter(|&r| span.push(game.row(r))).collect()
}

/// Express `target` as a linear combination of `basis`. Linearly dependent
/// basis vectors receive coefficient 0. Reports `Independent` when the
/// residual norm exceeds `tol · max(1, |target|)`.
pub fn affine_decompose(target: &[f64], basis: &[&[f64]], tol: f64) -> Decomposition {
    let mut span = Orthogonalizer::new();
    let accepted: Vec<usize> = (0..basis.len()).filter(|&k| span.push(basis[k])).collect();
    let partial = span.solve(target);
    let mut coefficients = vec![0.0; basis.len()];
    for (&k, &c) in accepted.iter().zip(&partial) {
        coefficients[k] = c;
    }
    let mut fitted = vec![0.0; target.len()];
    for (b, &c) in basis.iter().zip(&coefficients) {
        for (f, x) in fitted.iter_mut().zip(b.iter()) {
            *f += c * x;
        }
    }
    let residual = target
        .iter()
        .zip(&fitted)
        .map(|(t, f)| (t - f) * (t - f))
        .sum::<f64>()
        .sqrt();
    if residual > tol * dot(target, target).sqrt().max(1.0) {
        Decomposition::Independent { residual }
    } else {
        Decomposition::Combination { coefficients, residual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Coefficient sum equals 1.
    I,
    /// Coefficient sum below 1.
    II,
    /// Coefficient sum above 1; `trigger` is the row whose decomposition
    /// caused a basis row to be swapped out.
    IIISwap { trigger: usize },
    /// Outside the support of an optimal basic row strategy.
    Support,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    /// All coefficients >= 0 with sum <= 1 over non-negative rows: the row is
    /// weakly dominated by a mixture of the remaining rows.
    Dominated,
    /// The smaller game was re-solved and has the original value.
    ValueCheck,
    /// An optimal basic row strategy puts no mass on the row.
    Support,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub row: usize,
    pub group: Group,
    /// `(original row index, λ)` of the expression used for the removed row.
    pub coefficients: Vec<(usize, f64)>,
    pub coefficient_sum: f64,
    pub certificate: Certificate,
}

/// A candidate removal that would have changed the game value.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub row: usize,
    pub group: Group,
    pub coefficient_sum: f64,
    pub value_change: f64,
}

/// A row lying (almost) exactly on the affine hull of the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Degeneracy {
    pub row: usize,
    pub basis: Vec<usize>,
    pub coefficient_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    /// Surviving original row indices, ascending.
    pub kept: Vec<usize>,
    pub removed: Vec<Removal>,
    pub rejected: Vec<Rejection>,
    pub degeneracies: Vec<Degeneracy>,
    /// Constant added to every entry before decomposing (rows made non-negative).
    pub shift: f64,
    pub value: f64,
}

/// Remove row-player actions without changing the value; at most
/// `game.cols()` rows survive. `tol` is the coefficient-sum tolerance that
/// separates Group I from Groups II/III.
pub fn reduce_rows(game: &PayoffMatrix, tol: f64) -> Result<(PayoffMatrix, ReductionReport)> {
    let shift = (-game.min_entry()).max(0.0);
    let work = game.shifted(shift);
    let v0 = value(game)?;
    let value_tol = 1e-9 * v0.abs().max(1.0);

    let mut alive: Vec<usize> = (0..game.rows()).collect();
    let mut removed = Vec::new();
    let mut rejected = Vec::new();
    let mut degeneracies = Vec::new();
    let mut seen_rejections = HashSet::new();
    let mut seen_degeneracies = HashSet::new();

    'pass: loop {
        let basis = independent_rows(&work, &alive);
        if basis.len() == alive.len() || alive.len() == 1 {
            break;
        }
        let basis_rows: Vec<&[f64]> = basis.iter().map(|&r| work.row(r)).collect();

        for &r in alive.iter().filter(|r| !basis.contains(r)) {
            let Decomposition::Combination { coefficients: lambda, .. } =
                affine_decompose(work.row(r), &basis_rows, tol)
            else {
                continue;
            };
            let sum: f64 = lambda.iter().sum();
            if (sum - 1.0).abs() <= DEGENERACY_BAND && seen_degeneracies.insert(r) {
                degeneracies.push(Degeneracy {
                    row: r,
                    basis: basis.clone(),
                    coefficient_sum: sum,
                });
            }

            let (group, victim, expression) = if (sum - 1.0).abs() <= tol {
                (Group::I, r, basis.iter().copied().zip(lambda.iter().copied()).collect())
            } else if sum < 1.0 {
                (Group::II, r, basis.iter().copied().zip(lambda.iter().copied()).collect())
            } else {
                // swap out the basis row with the largest positive coefficient
                let (b, &lb) = lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l > 0.0)
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .expect("coefficient sum above 1 implies a positive coefficient");
                let mut mu: Vec<(usize, f64)> = basis
                    .iter()
                    .zip(&lambda)
                    .enumerate()
                    .filter(|&(k, _)| k != b)
                    .map(|(_, (&row, &l))| (row, -l / lb))
                    .collect();
                mu.push((r, 1.0 / lb));
                (Group::IIISwap { trigger: r }, basis[b], mu)
            };
            let expr_sum: f64 = expression.iter().map(|(_, l)| l).sum();

            let certificate = if expression.iter().all(|&(_, l)| l >= -tol) && expr_sum <= 1.0 + tol {
                Certificate::Dominated
            } else {
                let rest: Vec<usize> = alive.iter().copied().filter(|&x| x != victim).collect();
                let change = value(&game.select_rows(&rest))? - v0;
                if change.abs() > value_tol {
                    if seen_rejections.insert((victim, group)) {
                        rejected.push(Rejection {
                            row: victim,
                            group,
                            coefficient_sum: expr_sum,
                            value_change: change,
                        });
                    }
                    continue;
                }
                Certificate::ValueCheck
            };

            alive.retain(|&x| x != victim);
            removed.push(Removal {
                row: victim,
                group,
                coefficients: expression,
                coefficient_sum: expr_sum,
                certificate,
            });
            continue 'pass;
        }

        if alive.len() > game.cols() {
            let sub = game.select_rows(&alive);
            let sol = solve(&sub)?;
            let drop: Vec<usize> = alive
                .iter()
                .zip(&sol.row_strategy)
                .filter(|(_, &p)| p <= 0.0)
                .map(|(&r, _)| r)
                .collect();
            for r in drop {
                alive.retain(|&x| x != r);
                removed.push(Removal {
                    row: r,
                    group: Group::Support,
                    coefficients: Vec::new(),
                    coefficient_sum: 0.0,
                    certificate: Certificate::Support,
                });
            }
        }
        break;
    }

    let reduced = game.select_rows(&alive);
    let report = ReductionReport {
        kept: alive,
        removed,
        rejected,
        degeneracies,
        shift,
        value: v0,
    };
    Ok((reduced, report))
}
