//! Seeded experiment runs, metrics and file output.

mod config;
mod metrics;
mod output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{SuDeviation, ExperimentConfig, Mode, PerItem, SnrOverride};
pub use metrics::{cauchy_criterion, compute_theta, mean_std, norm_cum_value, stages_to_criterion, theta_series};
pub use output::{emit, read_csv_rows, write_summary, CsvRow, SummaryRow, CSV_HEADER};

use crate::auction::{pivot_payment, Allocation, BidCube};
use crate::envsim::{EnvRngs, Environment, GlobalState};
use crate::error::Result;
use crate::pcgame::{sample_allocation, solve_stage, AdaptiveJammer, JammerKind, JammerPolicy, SolveMode};
use crate::pdgame::{construct_bids, effective_bids, pd_stage, state_key, JammerEstimate, LearnerState};

/// Named substreams of a run's generator.
mod stream {
    pub const OCCUPANCY: u64 = 0;
    pub const SNR: u64 = 1;
    pub const TRAFFIC: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const JAMMER: u64 = 4;
    pub const COORDINATOR: u64 = 5;
    pub const DEVIATION: u64 = 6;
    pub const LEARNER_BASE: u64 = 100;
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything observed in one slot. Channels are physical ids.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub occupancy: Vec<bool>,
    pub allocation: Vec<Option<usize>>,
    pub jam: Option<usize>,
    pub utility: Vec<i64>,
    pub payment: Vec<f64>,
    /// Value of the assigned channel under the SU's own valuation, minus payment.
    pub profit: Vec<f64>,
    pub served: Vec<u32>,
    pub arrivals: Vec<u32>,
}

impl StageLog {
    pub fn total_utility(&self) -> f64 {
        self.utility.iter().sum::<i64>() as f64
    }
}

/// One replication of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u32,
    pub seed: u64,
    pub mode: Mode,
    pub sus: usize,
    pub stages: Vec<StageLog>,
}

impl RunRecord {
    pub fn stage_utility(&self) -> Vec<f64> {
        self.stages.iter().map(StageLog::total_utility).collect()
    }

    pub fn theta(&self) -> f64 {
        compute_theta(&self.stage_utility(), self.sus)
    }

    /// θ divided by the number of stages (0 for an empty run).
    pub fn theta_per_stage(&self) -> f64 {
        if self.stages.is_empty() {
            0.0
        } else {
            self.theta() / self.stages.len() as f64
        }
    }

    pub fn norm_cum_value(&self) -> Vec<f64> {
        norm_cum_value(&self.stage_utility())
    }

    /// Mean per-stage profit of SU `su`.
    pub fn mean_profit(&self, su: usize) -> f64 {
        if self.stages.is_empty() {
            return 0.0;
        }
        self.stages.iter().map(|s| s.profit[su]).sum::<f64>() / self.stages.len() as f64
    }
}

/// Channel assignment constraints of one slot: only idle channels, no
/// channel twice, and every idle channel used while unserved SUs remain.
pub fn allocation_is_feasible(occupancy: &[bool], allocation: &[Option<usize>]) -> bool {
    let mut used = vec![false; occupancy.len()];
    for c in allocation.iter().flatten() {
        if *c >= occupancy.len() || !occupancy[*c] || std::mem::replace(&mut used[*c], true) {
            return false;
        }
    }
    let idle = occupancy.iter().filter(|&&i| i).count();
    allocation.iter().flatten().count() == idle.min(allocation.len())
}

/// Per-SU bid rows over the current idle channels.
fn stage_bids(env: &Environment, state: &GlobalState, idle: &[usize]) -> Vec<Vec<Vec<f64>>> {
    (0..env.sus())
        .map(|i| {
            let rates: Vec<u32> = idle.iter().map(|&c| env.rate(state, i, c, None)).collect();
            construct_bids(state.buffers[i], &rates)
        })
        .collect()
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    env: Environment,
    occupancy_rng: ChaCha8Rng,
    snr_rng: ChaCha8Rng,
    traffic_rng: ChaCha8Rng,
    jammer_rng: ChaCha8Rng,
    coordinator_rng: ChaCha8Rng,
    deviation_rng: ChaCha8Rng,
    learner_rngs: Vec<ChaCha8Rng>,
    learners: Vec<LearnerState>,
    estimates: Vec<JammerEstimate>,
    adaptive: AdaptiveJammer,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        let n = cfg.n_sus;
        Ok(Self {
            cfg,
            env: cfg.environment()?,
            occupancy_rng: substream(seed, stream::OCCUPANCY),
            snr_rng: substream(seed, stream::SNR),
            traffic_rng: substream(seed, stream::TRAFFIC),
            jammer_rng: substream(seed, stream::JAMMER),
            coordinator_rng: substream(seed, stream::COORDINATOR),
            deviation_rng: substream(seed, stream::DEVIATION),
            learner_rngs: (0..n as u64).map(|i| substream(seed, stream::LEARNER_BASE + i)).collect(),
            learners: vec![LearnerState::new(); n],
            estimates: vec![JammerEstimate::new(); n],
            adaptive: AdaptiveJammer::new(),
        })
    }

    fn jammer_policy(&self, kind: JammerKind, occupancy: &[bool], idle: &[usize], minimax: impl FnOnce() -> Result<Vec<f64>>) -> Result<JammerPolicy> {
        Ok(match kind {
            JammerKind::Minimax => JammerPolicy {
                kind,
                distribution: minimax()?,
            },
            JammerKind::Uniform => JammerPolicy::uniform(idle.len()),
            JammerKind::Adaptive => self.adaptive.policy(occupancy, idle),
        })
    }

    fn step(&mut self, state: &GlobalState) -> Result<(GlobalState, StageLog)> {
        let n = self.cfg.n_sus;
        let idle = state.idle_channels();
        let occupancy: Vec<bool> = state.occupancy.iter().map(|c| c.is_idle()).collect();
        let m = idle.len();
        let bids = stage_bids(&self.env, state, &idle);
        let cube = BidCube::from_fn(n, m, |i, j, k| bids[i][j][k]);

        let (local, payment, profit, jam_local) = if m == 0 {
            (Allocation::empty(n), vec![0.0; n], vec![0.0; n], None)
        } else {
            match self.cfg.mode {
                Mode::Pc => {
                    let sol = solve_stage(&cube, self.cfg.solve_mode)?;
                    let alloc = sample_allocation(&sol.coordinator, &mut self.coordinator_rng);
                    let values = cube.effective(&sol.jammer.distribution);
                    let everyone: Vec<usize> = (0..n).collect();
                    let payment = pivot_payment(&values, &alloc, &everyone);
                    let profit = (0..n)
                        .map(|i| alloc.channel_of(i).map_or(0.0, |j| values.get(i, j) - payment[i]))
                        .collect();
                    let p2 = sol.jammer.distribution.clone();
                    let policy = self.jammer_policy(self.cfg.jammer, &occupancy, &idle, || Ok(p2))?;
                    let jam = policy.sample(&mut self.jammer_rng);
                    (alloc, payment, profit, jam)
                }
                Mode::Pd => {
                    let values: Vec<Vec<f64>> = (0..n)
                        .map(|i| effective_bids(&bids[i], &self.estimates[i].q2(&occupancy)))
                        .collect();
                    let keys: Vec<Vec<u32>> = (0..n).map(|i| state_key(self.cfg.conditioning, i, state)).collect();
                    let outcome = pd_stage(
                        m,
                        &values,
                        &keys,
                        &mut self.learners,
                        &self.cfg.schedule()?,
                        &self.cfg.deviations(),
                        &mut self.learner_rngs,
                        &mut self.deviation_rng,
                    )?;
                    let policy = self.jammer_policy(self.cfg.jammer, &occupancy, &idle, || {
                        Ok(solve_stage(&cube, SolveMode::Reduced)?.jammer.distribution)
                    })?;
                    let jam = policy.sample(&mut self.jammer_rng);
                    if let Some(k) = jam {
                        for e in &mut self.estimates {
                            e.observe(&occupancy, k);
                        }
                    }
                    (outcome.allocation, outcome.payments, outcome.profits, jam)
                }
            }
        };

        let allocation: Vec<Option<usize>> = local.as_slice().iter().map(|c| c.map(|j| idle[j])).collect();
        let jam = jam_local.map(|k| idle[k]);
        let (next, outcomes) = self.env.advance(
            state,
            &allocation,
            jam,
            EnvRngs {
                occupancy: &mut self.occupancy_rng,
                snr: &mut self.snr_rng,
                traffic: &mut self.traffic_rng,
            },
        );
        for (c, o) in allocation.iter().zip(&outcomes) {
            if let Some(c) = c {
                self.adaptive.observe(&occupancy, *c, f64::from(o.served));
            }
        }
        let log = StageLog {
            occupancy,
            allocation,
            jam,
            utility: outcomes.iter().map(|o| o.utility).collect(),
            payment,
            profit,
            served: outcomes.iter().map(|o| o.served).collect(),
            arrivals: outcomes.iter().map(|o| o.arrivals).collect(),
        };
        Ok((next, log))
    }
}

/// Seed of replication `run`.
pub fn replication_seed(cfg: &ExperimentConfig, run: u32) -> u64 {
    cfg.seed.wrapping_add(u64::from(run))
}

/// Run replication `run` of `cfg`. Deterministic in `(cfg, run)`.
pub fn run_replication(cfg: &ExperimentConfig, run: u32) -> Result<RunRecord> {
    cfg.validate()?;
    let seed = replication_seed(cfg, run);
    let mut runner = Runner::new(cfg, seed)?;
    let mut state = runner.env.initial_state(&mut substream(seed, stream::INITIAL));
    let mut stages = Vec::with_capacity(cfg.horizon as usize);
    for _ in 0..cfg.horizon {
        let (next, log) = runner.step(&state)?;
        stages.push(log);
        state = next;
    }
    Ok(RunRecord {
        run,
        seed,
        mode: cfg.mode,
        sus: cfg.n_sus,
        stages,
    })
}

/// All replications of `cfg`, run in parallel, returned in run order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect()
}

/// One configuration per value of the swept field.
pub fn sweep(base: &ExperimentConfig, param: &str, values: &[serde_json::Value]) -> Result<Vec<ExperimentConfig>> {
    values.iter().map(|v| base.with_field(param, v.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdgame::Deviation;

    fn small(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            horizon: 300,
            ..ExperimentConfig::baseline()
        }
    }

    #[test]
    fn zero_horizon_is_empty() {
        let cfg = ExperimentConfig {
            horizon: 0,
            ..small(Mode::Pd)
        };
        let r = run_replication(&cfg, 0).unwrap();
        assert!(r.stages.is_empty());
        assert_eq!(r.theta(), 0.0);
        assert_eq!(r.theta_per_stage(), 0.0);
    }

    #[test]
    fn no_traffic_no_loss() {
        for mode in [Mode::Pc, Mode::Pd] {
            let cfg = ExperimentConfig {
                mean_arrivals: PerItem::Shared(0.0),
                ..small(mode)
            };
            let r = run_replication(&cfg, 0).unwrap();
            assert!(r.stages.iter().all(|s| s.utility.iter().all(|&u| u == 0)));
            assert_eq!(r.theta(), 0.0);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        for mode in [Mode::Pc, Mode::Pd] {
            let cfg = small(mode);
            assert_eq!(run_replication(&cfg, 0).unwrap(), run_replication(&cfg, 0).unwrap());
            assert_ne!(run_replication(&cfg, 0).unwrap().stages, run_replication(&cfg, 1).unwrap().stages);
        }
    }

    #[test]
    fn allocations_respect_occupancy() {
        for mode in [Mode::Pc, Mode::Pd] {
            for jammer in [JammerKind::Minimax, JammerKind::Uniform, JammerKind::Adaptive] {
                let cfg = ExperimentConfig {
                    jammer,
                    n_channels: 3,
                    n_sus: 2,
                    ..small(mode)
                };
                let r = run_replication(&cfg, 0).unwrap();
                for s in &r.stages {
                    assert!(allocation_is_feasible(&s.occupancy, &s.allocation), "{s:?}");
                    assert!(s.jam.is_none_or(|k| s.occupancy[k]));
                    assert!(s.payment.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn jammed_su_serves_nothing() {
        let r = run_replication(&small(Mode::Pc), 3).unwrap();
        for s in &r.stages {
            for (i, c) in s.allocation.iter().enumerate() {
                if c.is_some() && *c == s.jam {
                    assert_eq!(s.served[i], 0);
                }
                if c.is_none() {
                    assert_eq!(s.served[i], 0);
                }
            }
        }
    }

    #[test]
    fn deviation_changes_only_with_config() {
        let mut cfg = small(Mode::Pd);
        let truthful = run_replication(&cfg, 0).unwrap();
        cfg.deviation = Some(SuDeviation {
            su: 0,
            policy: Deviation::Truthful,
        });
        assert_eq!(run_replication(&cfg, 0).unwrap(), truthful);
        cfg.deviation = Some(SuDeviation {
            su: 0,
            policy: Deviation::Scale { factor: 2.0 },
        });
        assert_ne!(run_replication(&cfg, 0).unwrap(), truthful);
    }

    #[test]
    fn replications_use_distinct_seeds() {
        let cfg = ExperimentConfig {
            replications: 3,
            seed: 40,
            ..small(Mode::Pd)
        };
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
        assert_eq!(runs[1], run_replication(&cfg, 1).unwrap());
    }

    #[test]
    fn sweep_builds_configs() {
        let cfgs = sweep(&ExperimentConfig::baseline(), "buffer_capacity", &[1.into(), 2.into(), 3.into()]).unwrap();
        assert_eq!(cfgs.iter().map(|c| c.buffer_capacity).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
