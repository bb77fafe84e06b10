//! Decentralized variant: each SU learns a distribution over channel
//! preferences with Boltzmann–Gibbs updates and takes part in a sequence of
//! preference auctions.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{first_preference_allocation, preference_payments, second_auction, Allocation};
use crate::envsim::GlobalState;
use crate::error::{Error, Result};

/// Minimum probability kept on every preference.
pub const PROBABILITY_FLOOR: f64 = 1e-4;

/// `σ(j) ∝ q(j)·exp(û(j)/ε)`, evaluated with the largest exponent removed.
pub fn boltzmann_gibbs(q: &[f64], u_hat: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let top = u_hat
        .iter()
        .zip(q)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&u, _)| u / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q
        .iter()
        .zip(u_hat)
        .map(|(&p, &u)| if p > 0.0 { p * (u / temperature - top).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// `q′ = (1 − λ)q + λσ`.
pub fn update_distribution(q: &[f64], sigma: &[f64], lambda: f64) -> Vec<f64> {
    q.iter().zip(sigma).map(|(&a, &b)| (1.0 - lambda) * a + lambda * b).collect()
}

/// Importance-weighted update of the played component only:
/// `û(j) += (μ/q(j))·(U − û(j))`.
pub fn update_payoff_estimate(u_hat: &[f64], played: usize, realized: f64, q: &[f64], mu: f64) -> Result<Vec<f64>> {
    if q[played] < PROBABILITY_FLOOR * (1.0 - 1e-9) {
        return Err(Error::ProbabilityFloor {
            action: played,
            probability: q[played],
            floor: PROBABILITY_FLOOR,
        });
    }
    let mut next = u_hat.to_vec();
    next[played] += mu / q[played] * (realized - u_hat[played]);
    Ok(next)
}

/// Mix with uniform so every entry is at least `floor`.
pub fn apply_floor(q: &[f64], floor: f64) -> Vec<f64> {
    let keep = 1.0 - floor * q.len() as f64;
    q.iter().map(|&p| keep * p + floor).collect()
}

/// Temperature and step-size exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    pub temperature: f64,
    pub beta: f64,
}

impl LearningSchedule {
    pub fn new(temperature: f64, beta: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "temperature ({temperature}) and beta ({beta}) must be positive"
            )));
        }
        Ok(Self { temperature, beta })
    }

    /// `(λ, μ) = (T^−(1+β), 1/T)` for the `visits`-th visit (counting from 1).
    pub fn rates(&self, visits: u64) -> (f64, f64) {
        let t = visits.max(1) as f64;
        (t.powf(-(1.0 + self.beta)), 1.0 / t)
    }
}

/// Learning table for one conditioning state.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerTable {
    pub q: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub visits: u64,
}

impl LearnerTable {
    pub fn new(channels: usize) -> Self {
        Self {
            q: vec![1.0 / channels as f64; channels],
            u_hat: vec![0.0; channels],
            visits: 0,
        }
    }

    /// One learning step after playing `played` and receiving `realized`.
    pub fn learn(&mut self, played: usize, realized: f64, schedule: &LearningSchedule) -> Result<()> {
        self.visits += 1;
        let (lambda, mu) = schedule.rates(self.visits);
        self.u_hat = update_payoff_estimate(&self.u_hat, played, realized, &self.q, mu)?;
        let sigma = boltzmann_gibbs(&self.q, &self.u_hat, schedule.temperature);
        self.q = apply_floor(&update_distribution(&self.q, &sigma, lambda), PROBABILITY_FLOOR);
        Ok(())
    }

    /// Sample a preference among `allowed` using `q` renormalized to them.
    pub fn sample<R: Rng + ?Sized>(&self, allowed: &[usize], rng: &mut R) -> usize {
        if allowed.len() == 1 {
            return allowed[0];
        }
        let w: Vec<f64> = allowed.iter().map(|&j| self.q[j]).collect();
        let d = WeightedIndex::new(&w).expect("preference weights are positive");
        allowed[d.sample(rng)]
    }
}

/// What a learner conditions its table on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Occupancy, own SNR row and own buffer.
    #[default]
    Local,
    /// The full global state.
    Global,
}

/// Table key for SU `su` under the given conditioning.
pub fn state_key(conditioning: Conditioning, su: usize, state: &GlobalState) -> Vec<u32> {
    let mut key: Vec<u32> = state.occupancy.iter().map(|c| u32::from(c.is_idle())).collect();
    match conditioning {
        Conditioning::Local => {
            key.extend(state.snr[su].iter().map(|&l| l as u32));
            key.push(state.buffers[su]);
        }
        Conditioning::Global => {
            key.extend(state.snr.iter().flatten().map(|&l| l as u32));
            key.extend(&state.buffers);
        }
    }
    key
}

/// All learning tables of one SU.
#[derive(Debug, Clone, Default)]
pub struct LearnerState {
    tables: HashMap<Vec<u32>, LearnerTable>,
}

impl LearnerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&mut self, key: &[u32], channels: usize) -> &mut LearnerTable {
        let t = self
            .tables
            .entry(key.to_vec())
            .or_insert_with(|| LearnerTable::new(channels));
        debug_assert_eq!(t.q.len(), channels);
        t
    }

    pub fn get(&self, key: &[u32]) -> Option<&LearnerTable> {
        self.tables.get(key)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Add-one smoothed jam frequencies per occupancy pattern, over the idle
/// channels of that pattern.
#[derive(Debug, Clone, Default)]
pub struct JammerEstimate {
    counts: HashMap<Vec<bool>, Vec<u64>>,
}

impl JammerEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    /// `Q2[k] = (count_k + 1) / (Σ counts + M′)`.
    pub fn q2(&self, occupancy: &[bool]) -> Vec<f64> {
        let m = occupancy.iter().filter(|&&idle| idle).count();
        let counts = self.counts.get(occupancy);
        let total: u64 = counts.map_or(0, |c| c.iter().sum());
        (0..m)
            .map(|k| (counts.map_or(0, |c| c[k]) + 1) as f64 / (total + m as u64) as f64)
            .collect()
    }

    /// Record a jam on idle channel `jammed` (index within the idle set).
    pub fn observe(&mut self, occupancy: &[bool], jammed: usize) {
        let m = occupancy.iter().filter(|&&idle| idle).count();
        assert!(jammed < m, "jammed channel must be idle");
        self.counts.entry(occupancy.to_vec()).or_insert_with(|| vec![0; m])[jammed] += 1;
    }
}

/// Bids `a[j][k] = min(b, g_j)` when `j ≠ k`, 0 when `j` is jammed.
/// `rates[j]` is the SU's unjammed rate on idle channel `j`.
pub fn construct_bids(buffer: u32, rates: &[u32]) -> Vec<Vec<f64>> {
    let m = rates.len();
    (0..m)
        .map(|j| {
            (0..m)
                .map(|k| if j == k { 0.0 } else { f64::from(buffer.min(rates[j])) })
                .collect()
        })
        .collect()
}

/// `a′[j] = Σ_k Q2[k]·a[j][k]`.
pub fn effective_bids(bids: &[Vec<f64>], q2: &[f64]) -> Vec<f64> {
    bids.iter().map(|row| row.iter().zip(q2).map(|(a, q)| a * q).sum()).collect()
}

/// How an SU turns its value into a declared bid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Deviation {
    #[default]
    Truthful,
    Scale { factor: f64 },
    /// Additive Uniform(−w, w) noise, clamped at 0.
    Noise { half_width: f64 },
}

impl Deviation {
    pub fn declare<R: Rng + ?Sized>(&self, value: f64, rng: &mut R) -> f64 {
        match *self {
            Deviation::Truthful => value,
            Deviation::Scale { factor } => value * factor,
            Deviation::Noise { half_width } => (value + rng.random_range(-half_width..=half_width)).max(0.0),
        }
    }
}

/// Result of one round of preference auctions.
#[derive(Debug, Clone, PartialEq)]
pub struct PdOutcome {
    pub allocation: Allocation,
    /// Auction level (0-based) at which each SU was served.
    pub level: Vec<Option<usize>>,
    pub first_preferences: Vec<usize>,
    pub declared: Vec<f64>,
    pub payments: Vec<f64>,
    /// Value of the won channel minus payment, 0 for unserved SUs.
    pub profits: Vec<f64>,
}

/// One stage of the decentralized protocol over `channels` idle channels.
///
/// `values[i][j]` is SU `i`'s effective value for idle channel `j`; `keys[i]`
/// selects its learning table. Every SU draws a first preference from its
/// table and bids; the first auction assigns each named channel to its
/// highest bidder. Unserved SUs then draw preferences over the remaining
/// channels (same table, renormalized) and further levels run until no SU
/// or no channel is left. Payments are the pivot payments of each level.
/// Each SU's table is then updated with its realized profit, credited to its
/// first preference.
#[allow(clippy::too_many_arguments)]
pub fn pd_stage<R: Rng, N: Rng>(
    channels: usize,
    values: &[Vec<f64>],
    keys: &[Vec<u32>],
    learners: &mut [LearnerState],
    schedule: &LearningSchedule,
    deviations: &[Deviation],
    learner_rngs: &mut [R],
    noise_rng: &mut N,
) -> Result<PdOutcome> {
    let n = values.len();
    let mut allocation = Allocation::empty(n);
    let mut level = vec![None; n];
    let mut payments = vec![0.0; n];
    let mut declared = vec![0.0; n];
    if channels == 0 {
        return Ok(PdOutcome {
            allocation,
            level,
            first_preferences: Vec::new(),
            declared,
            payments,
            profits: vec![0.0; n],
        });
    }

    let all_channels: Vec<usize> = (0..channels).collect();
    let first_preferences: Vec<usize> = (0..n)
        .map(|i| learners[i].table(&keys[i], channels).sample(&all_channels, &mut learner_rngs[i]))
        .collect();

    let mut sus: Vec<usize> = (0..n).collect();
    let mut free = all_channels;
    let mut round = 0;
    while !sus.is_empty() && !free.is_empty() {
        let mut prefs = vec![None; n];
        let mut bids = vec![0.0; n];
        for &i in &sus {
            let j = if round == 0 {
                first_preferences[i]
            } else {
                learners[i].table(&keys[i], channels).sample(&free, &mut learner_rngs[i])
            };
            prefs[i] = Some(j);
            bids[i] = deviations[i].declare(values[i][j], noise_rng);
            if round == 0 {
                declared[i] = bids[i];
            }
        }
        let won = if round == 0 {
            first_preference_allocation(&prefs, &bids, channels)
        } else {
            second_auction(&sus, &free, &prefs, &bids)
        };
        let pay = preference_payments(&sus, channels, &prefs, &bids, &won);
        for (i, _) in won.pairs() {
            level[i] = Some(round);
            payments[i] = pay[i];
        }
        allocation = allocation.merge(&won);
        sus.retain(|&i| won.channel_of(i).is_none());
        free.retain(|&j| won.su_of(j).is_none());
        round += 1;
    }

    let profits: Vec<f64> = (0..n)
        .map(|i| allocation.channel_of(i).map_or(0.0, |j| values[i][j] - payments[i]))
        .collect();
    for i in 0..n {
        learners[i]
            .table(&keys[i], channels)
            .learn(first_preferences[i], profits[i], schedule)?;
    }
    Ok(PdOutcome {
        allocation,
        level,
        first_preferences,
        declared,
        payments,
        profits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gibbs_examples() {
        assert_eq!(boltzmann_gibbs(&[0.2, 0.8], &[3.0, 3.0], 1.0), vec![0.2, 0.8]);
        let s = boltzmann_gibbs(&[0.5, 0.5], &[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s[0] - 0.7311).abs() < 1e-4 && (s[1] - 0.2689).abs() < 1e-4);
        let cold = boltzmann_gibbs(&[0.1, 0.9], &[2.0, 1.0], 1e-3);
        assert!((cold[0] - 1.0).abs() < 1e-12);
        let huge = boltzmann_gibbs(&[0.5, 0.5], &[1e6, 0.0], 1e-3);
        assert!(huge.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn distribution_update_examples() {
        assert_eq!(update_distribution(&[0.3, 0.7], &[0.9, 0.1], 0.0), vec![0.3, 0.7]);
        assert_eq!(update_distribution(&[0.3, 0.7], &[0.9, 0.1], 1.0), vec![0.9, 0.1]);
        assert_eq!(update_distribution(&[1.0, 0.0], &[0.0, 1.0], 0.5), vec![0.5, 0.5]);
    }

    #[test]
    fn payoff_estimate_examples() {
        assert_eq!(update_payoff_estimate(&[1.0, 2.0], 1, 9.0, &[0.5, 0.5], 0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(update_payoff_estimate(&[1.0, 2.0], 0, 9.0, &[1.0, 0.0], 1.0).unwrap(), vec![9.0, 2.0]);
        assert_eq!(update_payoff_estimate(&[0.0, 2.0], 1, 4.0, &[0.5, 0.5], 0.5).unwrap(), vec![0.0, 4.0]);
        assert!(matches!(
            update_payoff_estimate(&[0.0, 0.0], 1, 1.0, &[1.0 - 1e-6, 1e-6], 0.5),
            Err(Error::ProbabilityFloor { action: 1, .. })
        ));
    }

    #[test]
    fn schedule_ratio_decreases() {
        let s = LearningSchedule::new(1.0, 0.5).unwrap();
        let ratios: Vec<f64> = (1..200).map(|t| {
            let (l, m) = s.rates(t);
            l / m
        }).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!((ratios[99] - 100f64.powf(-0.5)).abs() < 1e-12);
        assert!(LearningSchedule::new(0.0, 0.5).is_err());
        assert!(LearningSchedule::new(1.0, -1.0).is_err());
    }

    #[test]
    fn jammer_estimate_smoothing() {
        let occ = [true, false, true];
        let mut e = JammerEstimate::new();
        assert_eq!(e.q2(&occ), vec![0.5, 0.5]);
        e.observe(&occ, 0);
        let q = e.q2(&occ);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-15 && (q[1] - 1.0 / 3.0).abs() < 1e-15);
        // other patterns are unaffected
        assert_eq!(e.q2(&[true, true, true]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn jammer_estimate_converges() {
        let occ = [true, true];
        let mut e = JammerEstimate::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            e.observe(&occ, usize::from(rng.random::<bool>()));
        }
        assert!(e.q2(&occ).iter().all(|q| (q - 0.5).abs() < 0.02));
    }

    #[test]
    fn bid_construction() {
        assert!(construct_bids(0, &[1, 3]).iter().flatten().all(|&b| b == 0.0));
        let b = construct_bids(2, &[1, 3]);
        assert_eq!(b, vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert_eq!(effective_bids(&b, &[0.25, 0.75]), vec![0.75, 0.5]);
    }

    #[test]
    fn deviations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Deviation::Truthful.declare(1.5, &mut rng), 1.5);
        assert_eq!(Deviation::Scale { factor: 2.0 }.declare(1.5, &mut rng), 3.0);
        for _ in 0..100 {
            let d = Deviation::Noise { half_width: 1.0 }.declare(0.5, &mut rng);
            assert!((0.0..=1.5).contains(&d));
        }
    }

    fn rngs(n: usize, seed: u64) -> Vec<ChaCha8Rng> {
        (0..n).map(|i| ChaCha8Rng::seed_from_u64(seed + i as u64)).collect()
    }

    #[test]
    fn single_su_single_channel() {
        let mut learners = vec![LearnerState::new()];
        let schedule = LearningSchedule::new(1.0, 0.5).unwrap();
        let mut r = rngs(1, 0);
        let mut noise = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let out = pd_stage(
                1,
                &[vec![0.0]],
                &[vec![1]],
                &mut learners,
                &schedule,
                &[Deviation::Truthful],
                &mut r,
                &mut noise,
            )
            .unwrap();
            assert_eq!(out.allocation.as_slice(), &[Some(0)]);
            assert_eq!(out.payments, vec![0.0]);
            assert_eq!(out.profits, vec![0.0]);
        }
    }

    #[test]
    fn converged_cold_learners_repeat_allocation() {
        let values = vec![vec![2.0, 0.5], vec![0.5, 2.0], vec![1.0, 1.0]];
        let keys = vec![vec![0]; 3];
        let mut learners = vec![LearnerState::new(); 3];
        for (i, l) in learners.iter_mut().enumerate() {
            let t = l.table(&keys[i], 2);
            let favourite = usize::from(i == 1);
            t.q = apply_floor(&[1.0 - favourite as f64, favourite as f64], PROBABILITY_FLOOR);
            t.u_hat = vec![0.0; 2];
            t.u_hat[favourite] = 5.0;
        }
        let schedule = LearningSchedule::new(1e-3, 0.5).unwrap();
        let mut r = rngs(3, 10);
        let mut noise = ChaCha8Rng::seed_from_u64(7);
        let expected = [Some(0), Some(1), None];
        let repeats = (0..200)
            .filter(|_| {
                let out = pd_stage(2, &values, &keys, &mut learners, &schedule, &[Deviation::Truthful; 3], &mut r, &mut noise)
                    .unwrap();
                out.allocation.as_slice() == expected
            })
            .count();
        assert!(repeats >= 198);
    }

    #[test]
    fn levels_fill_every_channel() {
        let mut learners = vec![LearnerState::new(), LearnerState::new(), LearnerState::new(), LearnerState::new()];
        let schedule = LearningSchedule::new(1.0, 0.5).unwrap();
        let mut r = rngs(4, 20);
        let mut noise = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|j| ((i + 2 * j) % 4) as f64).collect()).collect();
        let keys = vec![vec![0]; 4];
        for _ in 0..200 {
            let out = pd_stage(3, &values, &keys, &mut learners, &schedule, &[Deviation::Truthful; 4], &mut r, &mut noise)
                .unwrap();
            assert!(out.allocation.is_feasible(3));
            assert_eq!(out.allocation.assigned(), 3);
            for i in 0..4 {
                assert!(out.payments[i] >= 0.0);
                assert!(out.profits[i] >= -1e-12);
            }
            // conservation per level: profits plus payments equal served value
            for lvl in 0..3 {
                let members: Vec<usize> = (0..4).filter(|&i| out.level[i] == Some(lvl)).collect();
                let value: f64 = members.iter().map(|&i| values[i][out.allocation.channel_of(i).unwrap()]).sum();
                let split: f64 = members.iter().map(|&i| out.profits[i] + out.payments[i]).sum();
                assert!((value - split).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimate_is_unbiased_on_frozen_opponent() {
        // fixed q, i.i.d. payoffs for action 0: mean 1.5, sd 0.5
        let q = [0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut u = vec![0.0, 0.0];
        let mut visits = 0u64;
        let mut samples = Vec::new();
        for _ in 0..10_000 {
            let j = usize::from(rng.random::<f64>() >= q[0]);
            visits += 1;
            if j == 0 {
                let payoff = 1.0 + rng.random::<f64>();
                samples.push(payoff);
                u = update_payoff_estimate(&u, 0, payoff, &q, 1.0 / visits as f64).unwrap();
            }
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let sd = (1.0f64 / 12.0).sqrt() / (samples.len() as f64).sqrt();
        assert!((u[0] - mean).abs() < 3.0 * sd);
    }

    proptest! {
        #[test]
        fn learning_keeps_valid_distribution(
            realized in prop::collection::vec((0usize..3, -5.0f64..5.0), 1..200),
            eps in 0.05f64..5.0,
            beta in 0.05f64..2.0,
        ) {
            let schedule = LearningSchedule::new(eps, beta).unwrap();
            let mut table = LearnerTable::new(3);
            for (j, u) in realized {
                table.learn(j, u, &schedule).unwrap();
                prop_assert!((table.q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(table.q.iter().all(|&p| p >= PROBABILITY_FLOOR * (1.0 - 1e-9)));
            }
        }
    }
}
