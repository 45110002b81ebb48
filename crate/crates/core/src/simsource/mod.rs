//! Seeded photon-source simulators and their closed-form expectations.
//!
//! Three models produce [`TagStream`]s on the default channels
//! (0 = trigger, 1 = signal A, 2 = signal B):
//!
//! * [`QdPulsedConfig`]: a quantum dot driven by a pulsed laser, emitting a
//!   biexciton–exciton cascade with fixed probability per pulse while a
//!   blinking telegraph is in its on state.
//! * [`QdCwConfig`]: a continuously pumped dot as a continuous-time Markov
//!   chain over ground / exciton / biexciton, including re-excitation of the
//!   exciton back to the biexciton.
//! * [`SpdcConfig`]: pulsed pair generation with Poisson pair numbers, one
//!   photon heralding, the partner attenuated and split.
//!
//! Each model has an oracle returning the expected coincidence counts for a
//! window, and the photon statistics those counts imply.
//!
//! All randomness comes from a `ChaCha12Rng` seeded with `seed_from_u64`,
//! so a config plus seed reproduces a stream bit for bit.

mod qd_cw;
mod qd_pulsed;
mod quadrature;
mod spdc;
mod telegraph;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::WindowSpec;
use crate::estimators::{k_factor, SplittingRatio};
use crate::tagstream::{ChannelRoles, TagStream, TimeTag};

pub use qd_cw::QdCwConfig;
pub use qd_pulsed::QdPulsedConfig;
pub use spdc::{PairDistribution, SpdcConfig};
pub use telegraph::Blinking;

pub const TRIGGER_CHANNEL: u8 = 0;
pub const SIGNAL_A_CHANNEL: u8 = 1;
pub const SIGNAL_B_CHANNEL: u8 = 2;
/// Identifier recorded under `rng` in every simulated stream's metadata.
pub const RNG_ALGORITHM: &str = "chacha12/seed_from_u64";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported by the oracle: {0}")]
    Unsupported(String),
}

/// How triggers are defined when evaluating an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerMode {
    /// Detections on the trigger channel (heralds and trigger dark counts).
    Herald,
    /// Laser-referenced triggers at `phase_ps + k * period`.
    Periodic { phase_ps: u64 },
}

/// Expected counters and the photon statistics they imply.
///
/// `p0`, `p1`, `p2plus` are the estimators evaluated on the expected counts,
/// using the simulated splitter ratio for the `k` correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub p0: f64,
    pub p1: f64,
    pub p2plus: f64,
    pub expected_r0: f64,
    pub expected_r1a: f64,
    pub expected_r1b: f64,
    pub expected_r2: f64,
}

impl OracleStats {
    fn from_classes(classes: &[TriggerClass], splitter_t: f64) -> Result<Self, SimError> {
        let t = SplittingRatio::new(splitter_t)
            .map_err(|_| SimError::Unsupported(format!("splitter_t = {splitter_t} leaves one arm dark")))?;
        let k = k_factor(t);
        let mut e = [0.0f64; 4];
        for c in classes {
            let cat = c.no_click.categories();
            e[0] += c.expected;
            e[1] += c.expected * cat.a_only;
            e[2] += c.expected * cat.b_only;
            e[3] += c.expected * cat.both;
        }
        let [r0, r1a, r1b, r2] = e;
        let (p1, p2plus) = if r0 > 0.0 { ((r1a + r1b - k * r2) / r0, (1.0 + k) * r2 / r0) } else { (0.0, 0.0) };
        Ok(Self {
            p0: 1.0 - (p1 + p2plus),
            p1,
            p2plus,
            expected_r0: r0,
            expected_r1a: r1a,
            expected_r1b: r1b,
            expected_r2: r2,
        })
    }
}

/// Probabilities that a trigger window holds no A click, no B click, and
/// neither.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NoClick {
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

pub(crate) struct Categories {
    pub a_only: f64,
    pub b_only: f64,
    pub both: f64,
}

impl NoClick {
    pub const CERTAIN: NoClick = NoClick { a: 1.0, b: 1.0, ab: 1.0 };
    pub const ZERO: NoClick = NoClick { a: 0.0, b: 0.0, ab: 0.0 };

    /// Combines with an independent source of clicks.
    pub fn and(self, other: NoClick) -> NoClick {
        NoClick { a: self.a * other.a, b: self.b * other.b, ab: self.ab * other.ab }
    }

    /// Independent Poisson dark counts in the two arms over `width_ps`.
    pub fn dark(dark_hz: f64, width_ps: f64) -> NoClick {
        let p = (-dark_hz * 1e-12 * width_ps).exp();
        NoClick { a: p, b: p, ab: p * p }
    }

    pub fn scale(self, weight: f64) -> NoClick {
        NoClick { a: self.a * weight, b: self.b * weight, ab: self.ab * weight }
    }

    pub fn categories(&self) -> Categories {
        Categories {
            a_only: (self.b - self.ab).max(0.0),
            b_only: (self.a - self.ab).max(0.0),
            both: (1.0 - self.a - self.b + self.ab).max(0.0),
        }
    }
}

impl std::ops::Add for NoClick {
    type Output = NoClick;

    fn add(self, other: NoClick) -> NoClick {
        NoClick { a: self.a + other.a, b: self.b + other.b, ab: self.ab + other.ab }
    }
}

/// A population of triggers sharing one click distribution.
pub(crate) struct TriggerClass {
    pub expected: f64,
    pub no_click: NoClick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SourceConfig {
    QdPulsed(QdPulsedConfig),
    QdCw(QdCwConfig),
    Spdc(SpdcConfig),
}

impl SourceConfig {
    pub fn model_name(&self) -> &'static str {
        match self {
            SourceConfig::QdPulsed(_) => "qd_pulsed",
            SourceConfig::QdCw(_) => "qd_cw",
            SourceConfig::Spdc(_) => "spdc",
        }
    }

    /// Parses a model-specific JSON document (without the `model` tag).
    pub fn from_json(model: &str, json: &str) -> Result<Self, SimError> {
        let bad = |e: serde_json::Error| SimError::InvalidConfig(e.to_string());
        let cfg = match model {
            "qd_pulsed" => SourceConfig::QdPulsed(serde_json::from_str(json).map_err(bad)?),
            "qd_cw" => SourceConfig::QdCw(serde_json::from_str(json).map_err(bad)?),
            "spdc" => SourceConfig::Spdc(serde_json::from_str(json).map_err(bad)?),
            other => return Err(SimError::InvalidConfig(format!("unknown model {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_for(model: &str) -> Result<Self, SimError> {
        Self::from_json(model, "{}")
    }

    /// The model-specific JSON document (no `model` tag).
    pub fn to_json(&self) -> String {
        match self {
            SourceConfig::QdPulsed(c) => serde_json::to_string_pretty(c),
            SourceConfig::QdCw(c) => serde_json::to_string_pretty(c),
            SourceConfig::Spdc(c) => serde_json::to_string_pretty(c),
        }
        .expect("configs serialise")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            SourceConfig::QdPulsed(c) => c.validate(),
            SourceConfig::QdCw(c) => c.validate(),
            SourceConfig::Spdc(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SourceConfig::QdPulsed(c) => c.seed,
            SourceConfig::QdCw(c) => c.seed,
            SourceConfig::Spdc(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            SourceConfig::QdPulsed(c) => c.seed = seed,
            SourceConfig::QdCw(c) => c.seed = seed,
            SourceConfig::Spdc(c) => c.seed = seed,
        }
    }

    pub fn splitter_t(&self) -> f64 {
        match self {
            SourceConfig::QdPulsed(c) => c.splitter_t,
            SourceConfig::QdCw(c) => c.splitter_t,
            SourceConfig::Spdc(c) => c.splitter_t,
        }
    }

    /// Laser period, for the pulsed models.
    pub fn period_ps(&self) -> Option<u64> {
        match self {
            SourceConfig::QdPulsed(c) => Some(period_ps(c.rep_rate_hz)),
            SourceConfig::QdCw(_) => None,
            SourceConfig::Spdc(c) => Some(period_ps(c.rep_rate_hz)),
        }
    }

    /// Returns a copy with one top-level numeric field replaced, re-validated.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self, SimError> {
        let mut doc: serde_json::Value = serde_json::from_str(&self.to_json()).expect("round trip");
        let obj = doc.as_object_mut().expect("config is an object");
        if !obj.contains_key(name) {
            return Err(SimError::InvalidConfig(format!("{} has no parameter {name:?}", self.model_name())));
        }
        let number = if value.fract() == 0.0 && value >= 0.0 && value < u64::MAX as f64 {
            serde_json::Value::from(value as u64)
        } else {
            serde_json::Value::from(value)
        };
        obj.insert(name.to_string(), number);
        Self::from_json(self.model_name(), &doc.to_string())
    }

    pub fn simulate(&self) -> Result<TagStream, SimError> {
        match self {
            SourceConfig::QdPulsed(c) => simulate_qd_pulsed(c),
            SourceConfig::QdCw(c) => simulate_qd_cw(c),
            SourceConfig::Spdc(c) => simulate_spdc(c),
        }
    }
}

pub fn simulate_qd_pulsed(cfg: &QdPulsedConfig) -> Result<TagStream, SimError> {
    cfg.validate()?;
    Ok(cfg.simulate())
}

pub fn simulate_qd_cw(cfg: &QdCwConfig) -> Result<TagStream, SimError> {
    cfg.validate()?;
    Ok(cfg.simulate())
}

pub fn simulate_spdc(cfg: &SpdcConfig) -> Result<TagStream, SimError> {
    cfg.validate()?;
    Ok(cfg.simulate())
}

/// Oracle for channel-triggered analysis.
pub fn oracle_stats(cfg: &SourceConfig, window: WindowSpec) -> Result<OracleStats, SimError> {
    oracle_stats_with(cfg, window, TriggerMode::Herald)
}

pub fn oracle_stats_with(cfg: &SourceConfig, window: WindowSpec, mode: TriggerMode) -> Result<OracleStats, SimError> {
    cfg.validate()?;
    if window.width_ps == 0 {
        return Err(SimError::Unsupported("zero-width window".into()));
    }
    match cfg {
        SourceConfig::QdPulsed(c) => c.oracle(window, mode),
        SourceConfig::QdCw(c) => c.oracle(window, mode),
        SourceConfig::Spdc(c) => c.oracle(window, mode),
    }
}

pub fn period_ps(rep_rate_hz: f64) -> u64 {
    (1e12 / rep_rate_hz).round() as u64
}

pub(crate) fn rng_for(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<(), SimError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("{name} = {v} must be positive")))
    }
}

pub(crate) fn check_non_negative(name: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("{name} = {v} must be non-negative")))
    }
}

/// Appends Poisson dark counts on `channel` over `[0, duration)`.
pub(crate) fn push_dark_counts<R: rand::Rng>(
    rng: &mut R,
    tags: &mut Vec<TimeTag>,
    channel: u8,
    dark_hz: f64,
    duration_ps: u64,
) {
    if dark_hz <= 0.0 {
        return;
    }
    let mean_gap = 1e12 / dark_hz;
    let mut t = 0.0;
    loop {
        t += mean_gap * rng.sample::<f64, _>(rand_distr::Exp1);
        if t >= duration_ps as f64 {
            break;
        }
        tags.push(TimeTag::new(channel, t as u64));
    }
}

pub(crate) fn finish_stream(mut tags: Vec<TimeTag>, duration_ps: u64, model: &str, seed: u64) -> TagStream {
    tags.retain(|t| t.time_ps < duration_ps);
    tags.sort_unstable_by_key(|t| (t.time_ps, t.channel));
    TagStream::new(tags, duration_ps, ChannelRoles::default())
        .expect("simulated tags are sorted and on default channels")
        .with_meta("source", model)
        .with_meta("seed", seed.to_string())
        .with_meta("rng", RNG_ALGORITHM)
}
