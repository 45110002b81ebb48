//! Photon-number statistics from heralded coincidence counts.
//!
//! From the four counters `R0` (triggers), `R1A`, `R1B` (triggers with a
//! click in one arm only) and `R2` (both arms) the estimators give
//!
//! ```text
//! p0   = 1 - (R1A + R1B + R2) / R0
//! p1   = (R1A + R1B) / R0 - k(T) * R2 / R0,   k(T) = (T² + (1-T)²) / (2T(1-T))
//! p2+  = 1 - p0 - p1 = (1 + k) R2 / R0
//! ```
//!
//! `p1` is the lower-bound single-photon estimator; `k` corrects for an
//! unbalanced splitter. Uncertainties come from first-order propagation with
//! the four counters treated as independent Poisson variables.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::CoincidenceCounts;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("splitting ratio {0} outside (0, 1)")]
    SplittingRatio(f64),
    #[error("no triggers (R0 = 0)")]
    NoTriggers,
    #[error("degenerate g2 denominator 2(1 - p0) - p1 = {0}")]
    DegenerateDenominator(f64),
    #[error("alpha undefined without two-fold counts in both arms")]
    NoTwoFolds,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SplittingRatio(f64);

impl SplittingRatio {
    pub const BALANCED: SplittingRatio = SplittingRatio(0.5);

    pub fn new(t: f64) -> Result<Self, EstimatorError> {
        if t > 0.0 && t < 1.0 {
            Ok(Self(t))
        } else {
            Err(EstimatorError::SplittingRatio(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SplittingRatio {
    type Error = EstimatorError;
    fn try_from(t: f64) -> Result<Self, Self::Error> {
        Self::new(t)
    }
}

impl From<SplittingRatio> for f64 {
    fn from(t: SplittingRatio) -> f64 {
        t.0
    }
}

/// A value with its one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl fmt::Display for Measured {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} ± {:.2e}", self.value, self.sigma)
    }
}

/// Splitter correction `(T² + (1-T)²) / (2T(1-T))`; equals 1 at `T = 1/2`.
pub fn k_factor(t: SplittingRatio) -> f64 {
    let t = t.0;
    let u = 1.0 - t;
    (t * t + u * u) / (2.0 * t * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonStats {
    pub p0: f64,
    pub p1: f64,
    pub p2plus: f64,
    pub sigma_p0: f64,
    pub sigma_p1: f64,
    pub sigma_p2plus: f64,
    /// The counts these numbers came from, if any.
    pub counts: Option<CoincidenceCounts>,
    pub t: Option<SplittingRatio>,
    /// Set when no three-fold coincidence was recorded.
    pub low_count_flag: bool,
    /// Set when the lower-bound `p1` came out negative and was clamped to 0.
    pub p1_clamped: bool,
}

pub const STATS_CSV_HEADER: &str = "window_ps,p0,sigma_p0,p1,sigma_p1,p2plus,sigma_p2plus,low_count_flag";

impl PhotonStats {
    /// Stats quoted without underlying counts, e.g. from a publication.
    /// `p0` is completed as `1 - p1 - p2plus`.
    pub fn from_published(p1: f64, sigma_p1: f64, p2plus: f64, sigma_p2plus: f64) -> Self {
        Self {
            p0: 1.0 - p1 - p2plus,
            p1,
            p2plus,
            sigma_p0: sigma_p1.hypot(sigma_p2plus),
            sigma_p1,
            sigma_p2plus,
            counts: None,
            t: None,
            low_count_flag: false,
            p1_clamped: false,
        }
    }

    pub fn window_ps(&self) -> Option<u64> {
        self.counts.map(|c| c.window.width_ps)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.3e},{:.9e},{:.3e},{:.9e},{:.3e},{}",
            self.window_ps().map(|w| w.to_string()).unwrap_or_default(),
            self.p0,
            self.sigma_p0,
            self.p1,
            self.sigma_p1,
            self.p2plus,
            self.sigma_p2plus,
            self.low_count_flag
        )
    }
}

/// Applies the three estimators to a set of counts.
///
/// `p2plus` is computed as `(1 + k) R2 / R0` and `p0` as `1 - p1 - p2plus`,
/// which keeps both the unit-sum and the `(1 + k)` identities exact to
/// rounding even when `p2plus` is many orders below `p0`.
pub fn estimate_stats(counts: &CoincidenceCounts, t: SplittingRatio) -> Result<PhotonStats, EstimatorError> {
    if counts.r0 == 0 {
        return Err(EstimatorError::NoTriggers);
    }
    let k = k_factor(t);
    let r0 = counts.r0 as f64;
    let two = (counts.r1a + counts.r1b) as f64;
    let r2 = counts.r2 as f64;
    let all = two + r2;

    let mut p1 = (two - k * r2) / r0;
    let mut p2plus = (1.0 + k) * r2 / r0;
    let mut p0 = 1.0 - (p1 + p2plus);
    let mut p1_clamped = false;
    if p1 < 0.0 {
        log::warn!("lower-bound p1 = {p1:.3e} is negative (R2 = {}); clamped to 0", counts.r2);
        p1 = 0.0;
        p0 = 1.0 - all / r0;
        p2plus = 1.0 - p0;
        p1_clamped = true;
    }

    let r0_sq = r0 * r0;
    let r0_cu = r0_sq * r0;
    let sigma_p0 = (all / r0_sq + all * all / r0_cu).sqrt();
    let p1_num = two - k * r2;
    let sigma_p1 = ((two + k * k * r2) / r0_sq + p1_num * p1_num / r0_cu).sqrt();
    let low_count_flag = counts.r2 == 0;
    let r2_eff = if low_count_flag { 1.0 } else { r2 };
    let sigma_p2plus = (1.0 + k) * (r2_eff / r0_sq + r2_eff * r2_eff / r0_cu).sqrt();

    Ok(PhotonStats {
        p0,
        p1,
        p2plus,
        sigma_p0,
        sigma_p1,
        sigma_p2plus,
        counts: Some(*counts),
        t: Some(t),
        low_count_flag,
        p1_clamped,
    })
}

/// `g2(0) = 2 p2+ / (2(1 - p0) - p1)²`.
///
/// With `p0 = 1 - p1 - p2+` the denominator is `(p1 + 2 p2+)²`; the
/// uncertainty propagates `sigma_p1` and `sigma_p2plus`.
pub fn g2_from_stats(stats: &PhotonStats) -> Result<Measured, EstimatorError> {
    let denom = 2.0 * (1.0 - stats.p0) - stats.p1;
    if denom.is_nan() || denom <= 0.0 {
        return Err(EstimatorError::DegenerateDenominator(denom));
    }
    let d = stats.p1 + 2.0 * stats.p2plus;
    let d = if d > 0.0 { d } else { denom };
    let value = 2.0 * stats.p2plus / (d * d);
    let dg_dp2 = 2.0 / (d * d) - 8.0 * stats.p2plus / (d * d * d);
    let dg_dp1 = -4.0 * stats.p2plus / (d * d * d);
    let sigma = (dg_dp2 * stats.sigma_p2plus).hypot(dg_dp1 * stats.sigma_p1);
    Ok(Measured { value, sigma })
}

/// Anticorrelation parameter `R0 R2 / (R1A R1B)`.
pub fn alpha(counts: &CoincidenceCounts) -> Result<Measured, EstimatorError> {
    if counts.r1a == 0 || counts.r1b == 0 {
        return Err(EstimatorError::NoTwoFolds);
    }
    let (r0, r1a, r1b, r2) = (counts.r0 as f64, counts.r1a as f64, counts.r1b as f64, counts.r2 as f64);
    let scale = r0 / (r1a * r1b);
    let value = scale * r2;
    let sigma = if counts.r2 > 0 { value * (1.0 / r0 + 1.0 / r2 + 1.0 / r1a + 1.0 / r1b).sqrt() } else { scale };
    Ok(Measured { value, sigma })
}

/// Expected accidental three-fold coincidences from dark counts.
///
/// A true click in one arm paired with a dark count in the other, or dark
/// counts in both, within a window of `width_ps`:
/// `R0 [pA·dB·w + pB·dA·w + dA·dB·w²]`.
pub fn noise_floor_triples(r0: f64, p_a: f64, p_b: f64, dark_a_hz: f64, dark_b_hz: f64, width_ps: f64) -> f64 {
    let w = width_ps * 1e-12;
    r0 * (p_a * dark_b_hz * w + p_b * dark_a_hz * w + dark_a_hz * dark_b_hz * w * w)
}
