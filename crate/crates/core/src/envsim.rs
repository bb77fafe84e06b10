//! Stochastic cognitive-radio environment.
//!
//! Channels follow independent two-state primary-user chains, per-(SU, channel)
//! SNR levels follow discrete Markov chains, and each SU receives Poisson
//! traffic into a finite buffer. None of these chains depend on the actions
//! taken by the SUs or the jammer, except the buffers, which drain by the
//! number of packets served on the assigned channel.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelState {
    /// A primary user is transmitting.
    Busy,
    Idle,
}

impl ChannelState {
    pub fn is_idle(self) -> bool {
        matches!(self, ChannelState::Idle)
    }
}

/// Per-channel primary-user on/off chain.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyModel {
    busy_to_idle: Vec<f64>,
    idle_to_busy: Vec<f64>,
}

impl OccupancyModel {
    pub fn new(busy_to_idle: Vec<f64>, idle_to_busy: Vec<f64>) -> Result<Self> {
        if busy_to_idle.len() != idle_to_busy.len() {
            return Err(Error::InvalidModel(format!(
                "occupancy: {} busy->idle entries but {} idle->busy entries",
                busy_to_idle.len(),
                idle_to_busy.len()
            )));
        }
        for (j, &p) in busy_to_idle.iter().chain(&idle_to_busy).enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidModel(format!(
                    "occupancy probability #{j} = {p} is outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            busy_to_idle,
            idle_to_busy,
        })
    }

    /// Same transition pair on every channel.
    pub fn uniform(channels: usize, busy_to_idle: f64, idle_to_busy: f64) -> Result<Self> {
        Self::new(vec![busy_to_idle; channels], vec![idle_to_busy; channels])
    }

    pub fn channels(&self) -> usize {
        self.busy_to_idle.len()
    }

    pub fn busy_to_idle(&self, channel: usize) -> f64 {
        self.busy_to_idle[channel]
    }

    pub fn idle_to_busy(&self, channel: usize) -> f64 {
        self.idle_to_busy[channel]
    }

    /// Long-run probability that `channel` is idle. A frozen chain reports 0.5.
    pub fn stationary_idle(&self, channel: usize) -> f64 {
        let (a, b) = (self.busy_to_idle[channel], self.idle_to_busy[channel]);
        if a + b == 0.0 {
            0.5
        } else {
            a / (a + b)
        }
    }
}

/// Advance every channel's occupancy by one slot. Exactly one uniform draw is
/// consumed per channel.
pub fn step_occupancy<R: Rng + ?Sized>(
    occupancy: &[ChannelState],
    model: &OccupancyModel,
    rng: &mut R,
) -> Vec<ChannelState> {
    debug_assert_eq!(occupancy.len(), model.channels());
    occupancy
        .iter()
        .enumerate()
        .map(|(j, &state)| {
            let u: f64 = rng.random();
            match state {
                ChannelState::Busy if u < model.busy_to_idle[j] => ChannelState::Idle,
                ChannelState::Idle if u < model.idle_to_busy[j] => ChannelState::Busy,
                s => s,
            }
        })
        .collect()
}

/// Row-stochastic transition matrix over SNR level indices.
pub type TransitionMatrix = Vec<Vec<f64>>;

/// Discrete SNR levels and their transition law.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrModel {
    levels: Vec<f64>,
    transition: TransitionMatrix,
    overrides: BTreeMap<(usize, usize), TransitionMatrix>,
}

impl SnrModel {
    pub fn new(levels: Vec<f64>, transition: TransitionMatrix) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidModel("SNR level set is empty".into()));
        }
        if levels.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidModel("SNR levels must be finite and > 0".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel("SNR levels must be strictly increasing".into()));
        }
        validate_transition(&transition, levels.len())?;
        Ok(Self {
            levels,
            transition,
            overrides: BTreeMap::new(),
        })
    }

    /// Levels {10, 30, 50} with 0.4 on the diagonal and 0.3 elsewhere.
    pub fn reference() -> Self {
        Self::new(
            vec![10.0, 30.0, 50.0],
            vec![
                vec![0.4, 0.3, 0.3],
                vec![0.3, 0.4, 0.3],
                vec![0.3, 0.3, 0.4],
            ],
        )
        .expect("reference SNR model is valid")
    }

    /// Replace the shared matrix for one (SU, channel) pair.
    pub fn with_override(mut self, su: usize, channel: usize, transition: TransitionMatrix) -> Result<Self> {
        validate_transition(&transition, self.levels.len())?;
        self.overrides.insert((su, channel), transition);
        Ok(self)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }

    pub fn transition(&self, su: usize, channel: usize) -> &TransitionMatrix {
        self.overrides.get(&(su, channel)).unwrap_or(&self.transition)
    }
}

fn validate_transition(transition: &TransitionMatrix, n: usize) -> Result<()> {
    if transition.len() != n {
        return Err(Error::InvalidModel(format!(
            "SNR transition matrix has {} rows, expected {n}",
            transition.len()
        )));
    }
    for (r, row) in transition.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidModel(format!("SNR transition row {r} has {} entries, expected {n}", row.len())));
        }
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidModel(format!("SNR transition row {r} has an entry outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidModel(format!("SNR transition row {r} sums to {sum}")));
        }
    }
    Ok(())
}

/// SNR level indices, `indices[su][channel]`.
pub type SnrIndices = Vec<Vec<usize>>;

/// Advance every (SU, channel) SNR level by one slot, one uniform draw each.
pub fn step_snr<R: Rng + ?Sized>(indices: &SnrIndices, model: &SnrModel, rng: &mut R) -> SnrIndices {
    indices
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &level)| sample_row(&model.transition(i, j)[level], rng.random()))
                .collect()
        })
        .collect()
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding gap above the accumulated sum
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Poisson arrivals into finite per-SU buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    mean_arrivals: Vec<f64>,
    buffer_capacity: u32,
}

impl TrafficModel {
    pub fn new(mean_arrivals: Vec<f64>, buffer_capacity: u32) -> Result<Self> {
        if let Some(bad) = mean_arrivals.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidModel(format!("mean arrival rate {bad} must be finite and >= 0")));
        }
        Ok(Self {
            mean_arrivals,
            buffer_capacity,
        })
    }

    pub fn sus(&self) -> usize {
        self.mean_arrivals.len()
    }

    pub fn mean_arrivals(&self, su: usize) -> f64 {
        self.mean_arrivals[su]
    }

    pub fn buffer_capacity(&self) -> u32 {
        self.buffer_capacity
    }

    pub fn sample_arrivals<R: Rng + ?Sized>(&self, su: usize, rng: &mut R) -> u32 {
        let mean = self.mean_arrivals[su];
        if mean == 0.0 {
            return 0;
        }
        let draw: f64 = Poisson::new(mean).expect("validated mean").sample(rng);
        draw.min(u32::MAX as f64) as u32
    }
}

/// Slot-bandwidth product and target BER for the adaptive-modulation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    ts_w: f64,
    ber_target: f64,
}

impl RateParams {
    pub fn new(ts_w: f64, ber_target: f64) -> Result<Self> {
        if !(ts_w > 0.0) || !ts_w.is_finite() {
            return Err(Error::InvalidModel(format!("slot-bandwidth product {ts_w} must be > 0")));
        }
        if !(ber_target > 0.0 && ber_target < 0.2) {
            return Err(Error::InvalidBerTarget(ber_target));
        }
        Ok(Self { ts_w, ber_target })
    }

    pub fn ts_w(&self) -> f64 {
        self.ts_w
    }

    pub fn ber_target(&self) -> f64 {
        self.ber_target
    }

    /// Packets delivered on an unjammed channel at linear SNR `snr`.
    pub fn unjammed_rate(&self, snr: f64) -> u32 {
        debug_assert!(snr > 0.0);
        let gap = (0.2 / self.ber_target).ln();
        (self.ts_w * (1.0 + 1.5 * snr / gap).log2()).floor() as u32
    }
}

/// Packets served on `own_channel` when `jam_channel` is jammed.
pub fn transmission_rate(snr: f64, own_channel: usize, jam_channel: Option<usize>, params: &RateParams) -> u32 {
    if jam_channel == Some(own_channel) {
        0
    } else {
        params.unjammed_rate(snr)
    }
}

/// Next buffer level: `min((b - g)^+ + f, capacity)`.
pub fn buffer_next(buffer: u32, served: u32, arrivals: u32, capacity: u32) -> u32 {
    buffer.saturating_sub(served).saturating_add(arrivals).min(capacity)
}

/// Stage utility: minus the packets dropped on overflow, `-(b - g - B + f)^+`.
pub fn stage_utility(buffer: u32, served: u32, arrivals: u32, capacity: u32) -> i64 {
    let excess = buffer as i64 - served as i64 - capacity as i64 + arrivals as i64;
    -excess.max(0)
}

/// Analytic distribution of the next buffer level given the current level and
/// the packets served. Entry `x` is `P(b' = x)`; Poisson tail mass lands on
/// `capacity`.
pub fn buffer_transition_pmf(buffer: u32, served: u32, mean_arrivals: f64, capacity: u32) -> Vec<f64> {
    let capacity = capacity as usize;
    let base = (buffer.saturating_sub(served) as usize).min(capacity);
    let mut pmf = vec![0.0; capacity + 1];
    if mean_arrivals == 0.0 {
        pmf[base] = 1.0;
        return pmf;
    }
    let mut term = (-mean_arrivals).exp();
    let mut below = 0.0;
    for (x, slot) in pmf.iter_mut().enumerate().take(capacity).skip(base) {
        *slot = term;
        below += term;
        term *= mean_arrivals / (x - base + 1) as f64;
    }
    pmf[capacity] = (1.0 - below).max(0.0);
    pmf
}

/// Full environment state: occupancy, SNR level indices and buffers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub occupancy: Vec<ChannelState>,
    pub snr: SnrIndices,
    pub buffers: Vec<u32>,
}

impl GlobalState {
    pub fn idle_channels(&self) -> Vec<usize> {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_idle())
            .map(|(j, _)| j)
            .collect()
    }
}

/// What happened to one SU during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuOutcome {
    pub served: u32,
    pub arrivals: u32,
    pub utility: i64,
}

/// Random sources consumed by [`Environment::advance`], one per chain.
pub struct EnvRngs<'a, R: Rng + ?Sized> {
    pub occupancy: &'a mut R,
    pub snr: &'a mut R,
    pub traffic: &'a mut R,
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub occupancy: OccupancyModel,
    pub snr: SnrModel,
    pub traffic: TrafficModel,
    pub rate: RateParams,
}

impl Environment {
    pub fn sus(&self) -> usize {
        self.traffic.sus()
    }

    pub fn channels(&self) -> usize {
        self.occupancy.channels()
    }

    /// Occupancy drawn from each channel's stationary law, uniform SNR levels,
    /// empty buffers.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> GlobalState {
        let occupancy = (0..self.channels())
            .map(|j| {
                if rng.random::<f64>() < self.occupancy.stationary_idle(j) {
                    ChannelState::Idle
                } else {
                    ChannelState::Busy
                }
            })
            .collect();
        let n_levels = self.snr.levels().len();
        let snr = (0..self.sus())
            .map(|_| (0..self.channels()).map(|_| rng.random_range(0..n_levels)).collect())
            .collect();
        GlobalState {
            occupancy,
            snr,
            buffers: vec![0; self.sus()],
        }
    }

    /// Packets SU `su` would clear on `channel` with `jam` jammed.
    pub fn rate(&self, state: &GlobalState, su: usize, channel: usize, jam: Option<usize>) -> u32 {
        let snr = self.snr.level(state.snr[su][channel]);
        transmission_rate(snr, channel, jam, &self.rate)
    }

    /// Play one slot: serve the allocation under the jam, draw arrivals, and
    /// step every chain. Returns the next state and per-SU outcomes.
    pub fn advance<R: Rng + ?Sized>(
        &self,
        state: &GlobalState,
        allocation: &[Option<usize>],
        jam: Option<usize>,
        rngs: EnvRngs<'_, R>,
    ) -> (GlobalState, Vec<SuOutcome>) {
        let cap = self.traffic.buffer_capacity();
        let mut buffers = Vec::with_capacity(self.sus());
        let mut outcomes = Vec::with_capacity(self.sus());
        for (i, &b) in state.buffers.iter().enumerate() {
            let served = allocation[i].map_or(0, |j| self.rate(state, i, j, jam));
            let arrivals = self.traffic.sample_arrivals(i, rngs.traffic);
            outcomes.push(SuOutcome {
                served,
                arrivals,
                utility: stage_utility(b, served, arrivals, cap),
            });
            buffers.push(buffer_next(b, served, arrivals, cap));
        }
        let next = GlobalState {
            occupancy: step_occupancy(&state.occupancy, &self.occupancy, rngs.occupancy),
            snr: step_snr(&state.snr, &self.snr, rngs.snr),
            buffers,
        };
        (next, outcomes)
    }
}
