use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envsim::{Environment, OccupancyModel, RateParams, SnrModel, TrafficModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::pcgame::{JammerKind, SolveMode};
use crate::pdgame::{Conditioning, Deviation, LearningSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Centralized coordinator solving the stage game.
    Pc,
    /// Decentralized learners with preference auctions.
    Pd,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pc => "pc",
            Mode::Pd => "pd",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pc" => Ok(Mode::Pc),
            "pd" => Ok(Mode::Pd),
            other => Err(format!("unknown mode `{other}` (expected pc or pd)")),
        }
    }
}

/// A scalar shared by every item or one value per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerItem {
    Shared(f64),
    Each(Vec<f64>),
}

impl PerItem {
    pub fn resolve(&self, len: usize) -> Option<Vec<f64>> {
        match self {
            PerItem::Shared(v) => Some(vec![*v; len]),
            PerItem::Each(v) if v.len() == len => Some(v.clone()),
            PerItem::Each(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrOverride {
    pub su: usize,
    pub channel: usize,
    pub transition: TransitionMatrix,
}

/// One SU bidding with a non-truthful policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuDeviation {
    pub su: usize,
    pub policy: Deviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_sus: usize,
    pub n_channels: usize,
    #[serde(default = "default_levels")]
    pub snr_levels: Vec<f64>,
    #[serde(default = "default_transition")]
    pub snr_transition: TransitionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snr_overrides: Vec<SnrOverride>,
    /// Busy→idle probability per channel.
    pub alpha_n2f: PerItem,
    /// Idle→busy probability per channel.
    pub alpha_f2n: PerItem,
    pub buffer_capacity: u32,
    /// Mean Poisson arrivals per SU and slot.
    pub mean_arrivals: PerItem,
    #[serde(default = "default_ber")]
    pub ber_target: f64,
    #[serde(default = "default_ts_w")]
    pub ts_w: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_jammer")]
    pub jammer: JammerKind,
    pub mode: Mode,
    #[serde(default = "default_solve_mode")]
    pub solve_mode: SolveMode,
    #[serde(default)]
    pub conditioning: Conditioning,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<SuDeviation>,
}

fn default_levels() -> Vec<f64> {
    SnrModel::reference().levels().to_vec()
}

fn default_transition() -> TransitionMatrix {
    SnrModel::reference().transition(0, 0).clone()
}

fn default_ber() -> f64 {
    1e-5
}

fn default_ts_w() -> f64 {
    1.0
}

fn default_temperature() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.5
}

fn default_jammer() -> JammerKind {
    JammerKind::Minimax
}

fn default_solve_mode() -> SolveMode {
    SolveMode::Reduced
}

fn default_replications() -> u32 {
    1
}

impl ExperimentConfig {
    /// Three SUs, two channels, B_max = 2, f̄ = 0.5, α = (0.3, 0.4).
    pub fn baseline() -> Self {
        Self {
            n_sus: 3,
            n_channels: 2,
            snr_levels: default_levels(),
            snr_transition: default_transition(),
            snr_overrides: Vec::new(),
            alpha_n2f: PerItem::Shared(0.3),
            alpha_f2n: PerItem::Shared(0.4),
            buffer_capacity: 2,
            mean_arrivals: PerItem::Shared(0.5),
            ber_target: default_ber(),
            ts_w: default_ts_w(),
            temperature: default_temperature(),
            beta: default_beta(),
            jammer: default_jammer(),
            mode: Mode::Pd,
            solve_mode: default_solve_mode(),
            conditioning: Conditioning::Local,
            horizon: 10_000,
            seed: 0,
            replications: 1,
            deviation: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Every violated invariant, in one error.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_sus == 0 {
            errs.push("n_sus must be at least 1".to_string());
        }
        if self.n_channels == 0 {
            errs.push("n_channels must be at least 1".to_string());
        }
        if let Err(e) = SnrModel::new(self.snr_levels.clone(), self.snr_transition.clone()) {
            errs.push(format!("snr: {e}"));
        }
        for o in &self.snr_overrides {
            if o.su >= self.n_sus || o.channel >= self.n_channels {
                errs.push(format!("snr override ({}, {}) is out of range", o.su, o.channel));
            }
        }
        for (name, item, len) in [
            ("alpha_n2f", &self.alpha_n2f, self.n_channels),
            ("alpha_f2n", &self.alpha_f2n, self.n_channels),
        ] {
            match item.resolve(len) {
                None => errs.push(format!("{name} must be a scalar or have {len} entries")),
                Some(v) if v.iter().any(|p| !(0.0..=1.0).contains(p)) => {
                    errs.push(format!("{name} entries must lie in [0, 1]"))
                }
                Some(_) => {}
            }
        }
        match self.mean_arrivals.resolve(self.n_sus) {
            None => errs.push(format!("mean_arrivals must be a scalar or have {} entries", self.n_sus)),
            Some(v) if v.iter().any(|f| !(*f >= 0.0 && f.is_finite())) => {
                errs.push("mean_arrivals entries must be finite and >= 0".to_string())
            }
            Some(_) => {}
        }
        if !(self.ber_target > 0.0 && self.ber_target < 0.2) {
            errs.push(format!("ber_target {} must lie in (0, 0.2)", self.ber_target));
        }
        if !(self.ts_w > 0.0 && self.ts_w.is_finite()) {
            errs.push(format!("ts_w {} must be finite and > 0", self.ts_w));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            errs.push(format!("temperature {} must be finite and > 0", self.temperature));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            errs.push(format!("beta {} must be finite and > 0", self.beta));
        }
        if self.replications == 0 {
            errs.push("replications must be at least 1".to_string());
        }
        if let Some(d) = &self.deviation {
            if self.mode != Mode::Pd {
                errs.push("deviation is only supported in pd mode".to_string());
            }
            if d.su >= self.n_sus {
                errs.push(format!("deviation su {} is out of range", d.su));
            }
            let bad = match d.policy {
                Deviation::Truthful => false,
                Deviation::Scale { factor } => !(factor >= 0.0 && factor.is_finite()),
                Deviation::Noise { half_width } => !(half_width >= 0.0 && half_width.is_finite()),
            };
            if bad {
                errs.push("deviation parameter must be finite and >= 0".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn environment(&self) -> Result<Environment> {
        self.validate()?;
        let resolve = |p: &PerItem, n| p.resolve(n).expect("validated");
        let mut snr = SnrModel::new(self.snr_levels.clone(), self.snr_transition.clone())?;
        for o in &self.snr_overrides {
            snr = snr.with_override(o.su, o.channel, o.transition.clone())?;
        }
        Ok(Environment {
            occupancy: OccupancyModel::new(
                resolve(&self.alpha_n2f, self.n_channels),
                resolve(&self.alpha_f2n, self.n_channels),
            )?,
            snr,
            traffic: TrafficModel::new(resolve(&self.mean_arrivals, self.n_sus), self.buffer_capacity)?,
            rate: RateParams::new(self.ts_w, self.ber_target)?,
        })
    }

    pub fn schedule(&self) -> Result<LearningSchedule> {
        LearningSchedule::new(self.temperature, self.beta)
    }

    pub fn deviations(&self) -> Vec<Deviation> {
        let mut d = vec![Deviation::Truthful; self.n_sus];
        if let Some(dev) = &self.deviation {
            d[dev.su] = dev.policy;
        }
        d
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Copy with one top-level field replaced, re-validated.
    pub fn with_field(&self, name: &str, value: serde_json::Value) -> Result<Self> {
        let mut json = serde_json::to_value(self)?;
        let obj = json.as_object_mut().expect("config is an object");
        if !obj.contains_key(name) && !matches!(name, "snr_overrides" | "deviation") {
            return Err(Error::Config(vec![format!("unknown parameter `{name}`")]));
        }
        obj.insert(name.to_string(), value);
        let cfg: Self = serde_json::from_value(json)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
