//! Brute-force reference implementations used to cross-check the fast paths.
//! Everything here is exponential in the problem size.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matgame::PayoffMatrix;

/// Value of a zero-sum game by enumerating equal-size support pairs.
///
/// Every matrix game has an extreme equilibrium whose supports index a square
/// nonsingular kernel, so it is enough to solve the indifference system on
/// each square subsystem and keep the first pair that is mutually optimal.
pub fn support_enumeration_value(game: &PayoffMatrix) -> Result<f64> {
    const TOL: f64 = 1e-9;
    let (l1, l2) = (game.rows(), game.cols());
    for size in 1..=l1.min(l2) {
        for rows in subsets(l1, size) {
            for cols in subsets(l2, size) {
                let Some((p, v)) = indifferent_mix(game, &rows, &cols, true) else {
                    continue;
                };
                let Some((q, w)) = indifferent_mix(game, &rows, &cols, false) else {
                    continue;
                };
                if (v - w).abs() > 1e-7 * v.abs().max(1.0) || p.iter().chain(&q).any(|&x| x < -TOL) {
                    continue;
                }
                let mut full_p = vec![0.0; l1];
                for (&r, &x) in rows.iter().zip(&p) {
                    full_p[r] = x;
                }
                let mut full_q = vec![0.0; l2];
                for (&c, &x) in cols.iter().zip(&q) {
                    full_q[c] = x;
                }
                let guaranteed = game.row_mix(&full_p).into_iter().fold(f64::INFINITY, f64::min);
                let conceded = game.col_mix(&full_q).into_iter().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-7 * v.abs().max(1.0);
                if guaranteed >= v - slack && conceded <= v + slack {
                    return Ok(v);
                }
            }
        }
    }
    Err(Error::SolverFailure("support enumeration found no equilibrium".into()))
}

/// Solve for a mix over `rows` (row player) or `cols` (column player) that
/// makes the opponent indifferent across the other support.
fn indifferent_mix(game: &PayoffMatrix, rows: &[usize], cols: &[usize], row_player: bool) -> Option<(Vec<f64>, f64)> {
    let k = rows.len();
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    for (x, &r) in rows.iter().enumerate() {
        for (y, &c) in cols.iter().enumerate() {
            let o = game.get(r, c);
            if row_player {
                a[(y, x)] = o;
            } else {
                a[(x, y)] = o;
            }
        }
    }
    for i in 0..k {
        a[(i, k)] = -1.0;
        a[(k, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k + 1);
    b[k] = 1.0;
    let sol = a.lu().solve(&b)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((sol.rows(0, k).iter().copied().collect(), sol[k]))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Every matching of `n` SUs to `m` channels that uses `min(n, m)` pairs,
/// as per-SU channel choices.
pub fn all_full_matchings(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn go(su: usize, n: usize, m: usize, left: usize, used: &mut [bool], cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if su == n {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        // not enough SUs left to place the remaining channels
        if n - su < left {
            return;
        }
        cur.push(None);
        go(su + 1, n, m, left, used, cur, out);
        cur.pop();
        if left == 0 {
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                cur.push(Some(c));
                go(su + 1, n, m, left - 1, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, m, n.min(m), &mut vec![false; m], &mut Vec::with_capacity(n), &mut out);
    out
}

/// Maximum total weight over all matchings (any cardinality) of the
/// `weights[i][j]` bipartite graph.
pub fn brute_force_max_weight(weights: &[Vec<f64>]) -> f64 {
    fn go(su: usize, w: &[Vec<f64>], used: &mut [bool]) -> f64 {
        if su == w.len() {
            return 0.0;
        }
        let mut best = go(su + 1, w, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[su][c] + go(su + 1, w, used));
                used[c] = false;
            }
        }
        best
    }
    let m = weights.first().map_or(0, Vec::len);
    go(0, weights, &mut vec![false; m])
}
