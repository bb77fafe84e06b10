//! Centralized stage game: the coordinator picks a (randomized) allocation of
//! the idle channels, the jammer picks one idle channel, and the payoff is the
//! total bid value that survives the jam.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{max_weight_allocation, Allocation, BidCube};
use crate::error::{Error, Result};
use crate::matgame::{reduce_rows, solve, PayoffMatrix, ReductionReport};

/// Largest allocation count `build_full_game` will enumerate.
pub const ACTION_LIMIT: u128 = 100_000;

pub const REDUCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Enumerate every allocation, then eliminate rows.
    Exact,
    /// Grow a small allocation set from best responses.
    Reduced,
}

/// Coordinator pure actions and the payoff `U[l][k] = Σ_i a[i][alloc_l(i)][k]`.
#[derive(Debug, Clone)]
pub struct AllocationActionSet {
    pub allocations: Vec<Allocation>,
    pub payoff: PayoffMatrix,
}

impl AllocationActionSet {
    fn from_allocations(bids: &BidCube, allocations: Vec<Allocation>) -> Result<Self> {
        let m = bids.channels();
        let rows = allocations
            .iter()
            .map(|a| (0..m).map(|k| bids.allocation_value(a, k)).collect())
            .collect();
        let payoff = PayoffMatrix::new(rows)?;
        Ok(Self { allocations, payoff })
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }
}

/// Number of allocations that use `min(sus, channels)` SU–channel pairs.
pub fn action_count(sus: usize, channels: usize) -> u128 {
    let (hi, lo) = (sus.max(channels) as u128, sus.min(channels) as u128);
    (0..lo).map(|i| hi - i).product()
}

fn injective_allocations(sus: usize, channels: usize) -> Vec<Allocation> {
    fn extend(su: usize, left: usize, used: &mut Vec<bool>, cur: &mut Allocation, out: &mut Vec<Allocation>) {
        let sus = cur.sus();
        if su == sus {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if left > 0 {
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    cur.assign(su, Some(c));
                    extend(su + 1, left - 1, used, cur, out);
                    used[c] = false;
                }
            }
        }
        if sus - su > left {
            cur.assign(su, None);
            extend(su + 1, left, used, cur, out);
        }
    }
    let mut out = Vec::new();
    extend(
        0,
        sus.min(channels),
        &mut vec![false; channels],
        &mut Allocation::empty(sus),
        &mut out,
    );
    out
}

/// Every allocation of the idle channels, one row each.
pub fn build_full_game(bids: &BidCube) -> Result<AllocationActionSet> {
    let count = action_count(bids.sus(), bids.channels());
    if count > ACTION_LIMIT {
        return Err(Error::ActionLimit {
            count,
            limit: ACTION_LIMIT,
        });
    }
    if bids.channels() == 0 {
        return Err(Error::EmptyMatrix);
    }
    AllocationActionSet::from_allocations(bids, injective_allocations(bids.sus(), bids.channels()))
}

/// Welfare-maximizing allocation for each jam hypothesis, duplicates merged.
pub fn candidate_allocations(bids: &BidCube) -> Result<AllocationActionSet> {
    let everyone: Vec<usize> = (0..bids.sus()).collect();
    let mut allocations: Vec<Allocation> = Vec::new();
    for k in 0..bids.channels() {
        let (a, _) = max_weight_allocation(&bids.given_jam(k), &everyone);
        if !allocations.contains(&a) {
            allocations.push(a);
        }
    }
    if allocations.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    AllocationActionSet::from_allocations(bids, allocations)
}

/// Mixed strategy of the coordinator over allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorPolicy {
    pub allocations: Vec<Allocation>,
    pub weights: Vec<f64>,
}

impl CoordinatorPolicy {
    /// `p_u[i][j]`: probability that SU `i` is given channel `j`.
    pub fn marginals(&self, sus: usize, channels: usize) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; channels]; sus];
        for (a, &w) in self.allocations.iter().zip(&self.weights) {
            for (i, j) in a.pairs() {
                p[i][j] += w;
            }
        }
        p
    }

    /// `Σ_l p1[l] Σ_k q[k]·U[l][k]` against the jammer distribution `q`.
    pub fn expected_payoff(&self, bids: &BidCube, q: &[f64]) -> f64 {
        self.allocations
            .iter()
            .zip(&self.weights)
            .map(|(a, &w)| w * q.iter().enumerate().map(|(k, &qk)| qk * bids.allocation_value(a, k)).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JammerKind {
    /// Column player's optimal strategy of the stage game.
    Minimax,
    /// Uniform over idle channels.
    Uniform,
    /// Attacks the channel that has carried the most traffic so far.
    Adaptive,
}

/// Jammer's mixed strategy over the idle channels.
#[derive(Debug, Clone, PartialEq)]
pub struct JammerPolicy {
    pub kind: JammerKind,
    pub distribution: Vec<f64>,
}

impl JammerPolicy {
    pub fn uniform(channels: usize) -> Self {
        Self {
            kind: JammerKind::Uniform,
            distribution: vec![1.0 / channels as f64; channels],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        sample_index(&self.distribution, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    if weights.len() <= 1 {
        return (weights.len() == 1).then_some(0);
    }
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}

/// Solved stage game.
#[derive(Debug, Clone)]
pub struct StageSolution {
    pub actions: AllocationActionSet,
    pub coordinator: CoordinatorPolicy,
    pub jammer: JammerPolicy,
    pub value: f64,
    pub report: ReductionReport,
}

/// Solve the coordinator-vs-jammer game for one stage.
///
/// `Exact` enumerates all allocations and eliminates rows before solving.
/// `Reduced` starts from the per-hypothesis best responses and adds the
/// coordinator's best response to the current jammer strategy until none
/// improves on the restricted value, which makes the restricted value exact;
/// the final set is then trimmed to at most `channels` rows.
pub fn solve_stage(bids: &BidCube, mode: SolveMode) -> Result<StageSolution> {
    let actions = match mode {
        SolveMode::Exact => build_full_game(bids)?,
        SolveMode::Reduced => best_response_closure(bids)?,
    };
    let (reduced, report) = reduce_rows(&actions.payoff, REDUCE_TOL)?;
    let sol = solve(&reduced)?;
    let allocations: Vec<Allocation> = report.kept.iter().map(|&l| actions.allocations[l].clone()).collect();
    let kept_actions = AllocationActionSet {
        allocations: allocations.clone(),
        payoff: reduced,
    };
    Ok(StageSolution {
        actions: kept_actions,
        coordinator: CoordinatorPolicy {
            allocations,
            weights: sol.row_strategy,
        },
        jammer: JammerPolicy {
            kind: JammerKind::Minimax,
            distribution: sol.col_strategy,
        },
        value: sol.value,
        report,
    })
}

fn best_response_closure(bids: &BidCube) -> Result<AllocationActionSet> {
    let everyone: Vec<usize> = (0..bids.sus()).collect();
    let mut set = candidate_allocations(bids)?;
    loop {
        let sol = solve(&set.payoff)?;
        let (br, gain) = max_weight_allocation(&bids.effective(&sol.col_strategy), &everyone);
        if gain <= sol.value + 1e-9 * sol.value.abs().max(1.0) || set.allocations.contains(&br) {
            return Ok(set);
        }
        let mut allocations = set.allocations;
        allocations.push(br);
        set = AllocationActionSet::from_allocations(bids, allocations)?;
    }
}

/// Draw one allocation from the coordinator's mixed strategy.
pub fn sample_allocation<R: Rng + ?Sized>(policy: &CoordinatorPolicy, rng: &mut R) -> Allocation {
    let l = sample_index(&policy.weights, rng).expect("coordinator policy has no actions");
    policy.allocations[l].clone()
}

/// Jammer that best-responds to the traffic it has seen served, per
/// occupancy pattern.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveJammer {
    served: HashMap<Vec<bool>, Vec<f64>>,
}

impl AdaptiveJammer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform over the idle channels with the largest observed traffic.
    pub fn policy(&self, occupancy: &[bool], idle: &[usize]) -> JammerPolicy {
        let Some(totals) = self.served.get(occupancy) else {
            return JammerPolicy {
                kind: JammerKind::Adaptive,
                ..JammerPolicy::uniform(idle.len())
            };
        };
        let best = idle.iter().map(|&c| totals[c]).fold(f64::NEG_INFINITY, f64::max);
        let hits: Vec<f64> = idle.iter().map(|&c| f64::from(u8::from(totals[c] == best))).collect();
        let count: f64 = hits.iter().sum();
        JammerPolicy {
            kind: JammerKind::Adaptive,
            distribution: hits.into_iter().map(|h| h / count).collect(),
        }
    }

    /// Record `amount` of traffic carried on physical channel `channel`.
    pub fn observe(&mut self, occupancy: &[bool], channel: usize, amount: f64) {
        self.served.entry(occupancy.to_vec()).or_insert_with(|| vec![0.0; occupancy.len()])[channel] += amount;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgame::value;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cube(rng: &mut ChaCha8Rng, n: usize, m: usize) -> BidCube {
        BidCube::from_fn(n, m, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn action_counts() {
        assert_eq!(action_count(2, 2), 2);
        assert_eq!(action_count(3, 2), 6);
        assert_eq!(action_count(2, 3), 6);
        assert_eq!(action_count(5, 0), 1);
        assert_eq!(action_count(12, 6), 665_280);
    }

    #[test]
    fn full_game_two_by_two_rows() {
        let cube = BidCube::from_fn(2, 2, |i, j, k| (100 * i + 10 * j + k) as f64 + 1.0);
        let g = build_full_game(&cube).unwrap();
        assert_eq!(g.len(), 2);
        for (l, a) in g.allocations.iter().enumerate() {
            for k in 0..2 {
                let expect: f64 = a.pairs().map(|(i, j)| cube.get(i, j, k)).sum();
                assert_eq!(g.payoff.get(l, k), expect);
            }
        }
        let straight = g.allocations.iter().position(|a| a.as_slice() == [Some(0), Some(1)]).unwrap();
        assert_eq!(g.payoff.get(straight, 0), cube.get(0, 0, 0) + cube.get(1, 1, 0));
    }

    #[test]
    fn full_game_matches_oracle_enumeration() {
        let cube = BidCube::from_fn(3, 2, |_, _, _| 1.0);
        let g = build_full_game(&cube).unwrap();
        assert_eq!(g.len(), 6);
        let mut ours: Vec<Vec<Option<usize>>> = g.allocations.iter().map(|a| a.as_slice().to_vec()).collect();
        let mut theirs = oracle::all_full_matchings(3, 2);
        ours.sort();
        theirs.sort();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn full_game_guard() {
        let cube = BidCube::from_fn(12, 6, |_, _, _| 0.0);
        assert!(matches!(build_full_game(&cube), Err(Error::ActionLimit { .. })));
    }

    #[test]
    fn constant_bids() {
        let c = 0.7;
        let cube = BidCube::from_fn(3, 2, |_, _, _| c);
        let g = build_full_game(&cube).unwrap();
        assert!(g.payoff.iter_rows().flatten().all(|&u| (u - 2.0 * c).abs() < 1e-15));
        let s = solve_stage(&cube, SolveMode::Exact).unwrap();
        assert!((s.value - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn jam_independent_bids_give_one_candidate() {
        let cube = BidCube::from_fn(3, 3, |i, j, _| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64);
        assert_eq!(candidate_allocations(&cube).unwrap().len(), 1);
    }

    #[test]
    fn distinct_optimum_per_hypothesis() {
        // each SU values only channel 0 unless it is jammed
        let cube = BidCube::from_fn(2, 2, |i, j, k| match (i, j, k) {
            (0, 0, 1) => 5.0,
            (0, 1, 0) => 3.0,
            (1, 0, 0) => 1.0,
            (1, 1, 0) => 2.0,
            (1, 0, 1) => 3.0,
            _ => 0.0,
        });
        let c = candidate_allocations(&cube).unwrap();
        assert_eq!(c.len(), 2);
        let full = build_full_game(&cube).unwrap();
        assert!(c.allocations.iter().all(|a| full.allocations.contains(a)));
    }

    #[test]
    fn single_idle_channel() {
        let cube = BidCube::from_fn(2, 1, |i, _, _| if i == 0 { 3.0 } else { 1.0 });
        for mode in [SolveMode::Exact, SolveMode::Reduced] {
            let s = solve_stage(&cube, mode).unwrap();
            assert_eq!(s.coordinator.allocations.len(), 1);
            assert_eq!(s.coordinator.allocations[0].as_slice(), &[Some(0), None]);
            assert_eq!(s.jammer.distribution, vec![1.0]);
            assert!((s.value - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_instance_jammer_mixes_evenly() {
        // one SU valuing either channel at 1 unless it is jammed
        let cube = BidCube::from_fn(1, 2, |_, j, k| if j != k { 1.0 } else { 0.0 });
        let s = solve_stage(&cube, SolveMode::Exact).unwrap();
        assert!((s.jammer.distribution[0] - 0.5).abs() < 1e-12);
        assert!((s.coordinator.weights[0] - 0.5).abs() < 1e-12);
        assert!((s.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn best_response_per_hypothesis_alone_is_not_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut short = 0;
        for _ in 0..500 {
            let cube = random_cube(&mut rng, 3, 2);
            let naive = value(&candidate_allocations(&cube).unwrap().payoff).unwrap();
            let exact = solve_stage(&cube, SolveMode::Exact).unwrap().value;
            let reduced = solve_stage(&cube, SolveMode::Reduced).unwrap().value;
            assert!((reduced - exact).abs() < 1e-9);
            if naive < exact - 1e-6 {
                short += 1;
            }
        }
        assert!(short > 0);
    }

    #[test]
    fn modes_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, m) in [(3, 2), (3, 3), (4, 2), (2, 3), (4, 3)] {
            for _ in 0..50 {
                let cube = random_cube(&mut rng, n, m);
                let exact = solve_stage(&cube, SolveMode::Exact).unwrap();
                let reduced = solve_stage(&cube, SolveMode::Reduced).unwrap();
                assert!((exact.value - reduced.value).abs() < 1e-6);
                assert!(reduced.coordinator.allocations.len() <= m);
                assert!(exact.coordinator.allocations.len() <= m);
            }
        }
    }

    #[test]
    fn policy_guarantees_value_against_any_jammer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cube = random_cube(&mut rng, 3, 3);
            let s = solve_stage(&cube, SolveMode::Reduced).unwrap();
            for _ in 0..20 {
                let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
                assert!(s.coordinator.expected_payoff(&cube, &q) >= s.value - 1e-9);
            }
        }
    }

    #[test]
    fn sampling_frequencies_and_marginals() {
        let policy = CoordinatorPolicy {
            allocations: vec![
                Allocation::from_vec(vec![Some(0), Some(1), None]),
                Allocation::from_vec(vec![Some(0), None, Some(1)]),
            ],
            weights: vec![0.5, 0.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut first = 0;
        let mut empirical = vec![vec![0.0; 2]; 3];
        for _ in 0..draws {
            let a = sample_allocation(&policy, &mut rng);
            if a == policy.allocations[0] {
                first += 1;
            }
            for (i, j) in a.pairs() {
                empirical[i][j] += 1.0 / draws as f64;
            }
        }
        assert!((first as f64 / draws as f64 - 0.5).abs() < 0.02);
        let analytic = policy.marginals(3, 2);
        let l1: f64 = analytic.iter().flatten().zip(empirical.iter().flatten()).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 0.03);
        assert_eq!(analytic[0], vec![1.0, 0.0]);
        assert_eq!(analytic[2], vec![0.0, 0.5]);
    }

    #[test]
    fn degenerate_policy_always_same() {
        let only = Allocation::from_vec(vec![Some(1), Some(0)]);
        let policy = CoordinatorPolicy {
            allocations: vec![only.clone()],
            weights: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_allocation(&policy, &mut rng) == only));
    }

    #[test]
    fn adaptive_jammer_targets_busiest_channel() {
        let mut j = AdaptiveJammer::new();
        let occ = [true, true, false];
        assert_eq!(j.policy(&occ, &[0, 1]).distribution, vec![0.5, 0.5]);
        j.observe(&occ, 1, 2.0);
        j.observe(&occ, 0, 1.0);
        assert_eq!(j.policy(&occ, &[0, 1]).distribution, vec![0.0, 1.0]);
        assert_eq!(j.policy(&[true, true, true], &[0, 1, 2]).distribution.len(), 3);
    }
}
