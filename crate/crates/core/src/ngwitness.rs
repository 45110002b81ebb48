//! Boundary of the set of Gaussian-state mixtures in the `(p1, p2+)` plane and
//! the witness measuring how far a measured point sits below it.
//!
//! The boundary is parametrised by the squeezing `r ≥ 0`:
//!
//! ```text
//! d²  = (e^{4r} - 1) / 4
//! p0  = exp(-d² (1 - tanh r)) / cosh r
//! p1  = d² exp(-d² (1 - tanh r)) / cosh³ r
//! p2  = 1 - p0 - p1
//! ```
//!
//! `p1(r)` rises from 0, peaks at `r = ln(3)/2` and falls again. Only the
//! ascending branch matters: there `p2 ≈ (2/3) p1³`, and states strictly below
//! the curve are not mixtures of Gaussian states.
//!
//! The witness is the signed vertical gap `p2_boundary(p1) - p2+` in units of
//! `σ(p2+)`; positive values certify non-Gaussianity.

use std::fmt;
use std::io::{self, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::PhotonStats;

/// Upper limit of the squeezing parameter accepted by [`boundary_point`].
pub const R_MAX: f64 = 10.0;
/// Relative tolerance on `r` for the root searches.
pub const ROOT_REL_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 200;

/// Below this `r`, `ln(p0 + p1)` is summed from its Taylor series.
const SERIES_CUTOFF: f64 = 0.05;
/// Coefficients of `ln(p0 + p1)` in powers of `r`, from `r³` through `r¹⁵`.
const LOG_MASS_SERIES: [f64; 13] = [
    -2.0 / 3.0,
    -3.0 / 2.0,
    -2.0 / 15.0,
    4.0 / 3.0,
    -4.0 / 315.0,
    -103.0 / 60.0,
    -2.0 / 2835.0,
    704.0 / 315.0,
    -4.0 / 155925.0,
    -42863.0 / 14175.0,
    -4.0 / 6081075.0,
    26216.0 / 6237.0,
    -8.0 / 638512875.0,
];

#[derive(Debug, Error, PartialEq)]
pub enum WitnessError {
    #[error("squeezing parameter {0} outside [0, {R_MAX}]")]
    ROutOfRange(f64),
    #[error("p1 = {p1} exceeds the boundary maximum {p1_max}")]
    OutOfReach { p1: f64, p1_max: f64 },
    #[error("p1 = {0} must be positive")]
    NonPositiveP1(f64),
    #[error("invalid sampling range: {0}")]
    InvalidRange(String),
    #[error("sigma(p2+) must be positive, got {0}")]
    NonPositiveSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub r: f64,
    pub d_sq: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    NonGaussian,
    GaussianCompatible,
    Indeterminate,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::NonGaussian => "non_gaussian",
            Side::GaussianCompatible => "gaussian_compatible",
            Side::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessResult {
    /// `(p2_boundary - p2+) / σ(p2+)`; `+∞` when `p1` exceeds the curve maximum.
    pub delta_w_sigma: f64,
    /// Same gap with the `p1` uncertainty carried through the boundary slope
    /// and added in quadrature to `σ(p2+)`.
    pub delta_w_sigma_p1_inclusive: f64,
    pub boundary: BoundaryPoint,
    pub p2_boundary: f64,
    pub side: Side,
    /// `p1` lies above the boundary maximum, where no Gaussian mixture exists.
    pub out_of_reach: bool,
}

pub const WITNESS_CSV_HEADER: &str = "window_ps,p1,p2plus,sigma_p2plus,delta_w_sigma,side";
pub const BOUNDARY_CSV_HEADER: &str = "p1,p2_boundary";

struct Curve {
    d_sq: f64,
    p0: f64,
    p1: f64,
    p2: f64,
}

fn curve(r: f64) -> Curve {
    if r == 0.0 {
        return Curve { d_sq: 0.0, p0: 1.0, p1: 0.0, p2: 0.0 };
    }
    let d_sq = (4.0 * r).exp_m1() / 4.0;
    let one_minus_tanh = 2.0 / ((2.0 * r).exp() + 1.0);
    let x = d_sq * one_minus_tanh;
    let half_sinh = (0.5 * r).sinh();
    let ln_cosh = (2.0 * half_sinh * half_sinh).ln_1p();
    let p0 = (-x - ln_cosh).exp();
    let p1 = d_sq * (-x - 3.0 * ln_cosh).exp();
    let log_mass = if r < SERIES_CUTOFF {
        let poly = LOG_MASS_SERIES.iter().rev().fold(0.0, |acc, &c| acc * r + c);
        poly * r * r * r
    } else {
        let q = d_sq * (-2.0 * ln_cosh).exp();
        -x + q.ln_1p() - ln_cosh
    };
    Curve { d_sq, p0, p1, p2: -log_mass.exp_m1() }
}

/// `d ln p1 / dr`; positive on the ascending branch.
fn dlog_p1(r: f64) -> f64 {
    let e4 = (4.0 * r).exp();
    let d_sq = (4.0 * r).exp_m1() / 4.0;
    let th = r.tanh();
    let sech_sq = 1.0 / (r.cosh() * r.cosh());
    e4 / d_sq - e4 * (1.0 - th) + d_sq * sech_sq - 3.0 * th
}

/// Slope `dp2/dp1` along the boundary at `r > 0`.
fn boundary_slope(r: f64) -> f64 {
    let c = curve(r);
    let th = r.tanh();
    let sech_sq = 1.0 / (r.cosh() * r.cosh());
    let dx = (4.0 * r).exp() * (1.0 - th) - c.d_sq * sech_sq;
    let dp0 = c.p0 * (-dx - th);
    let dp1 = c.p1 * dlog_p1(r);
    -(dp0 + dp1) / dp1
}

pub fn boundary_point(r: f64) -> Result<BoundaryPoint, WitnessError> {
    if !(0.0..=R_MAX).contains(&r) {
        return Err(WitnessError::ROutOfRange(r));
    }
    let c = curve(r);
    Ok(BoundaryPoint { r, d_sq: c.d_sq, p0: c.p0, p1: c.p1, p2: c.p2 })
}

/// Location and height of the maximum of `p1(r)`: `(r_peak, p1_max)`.
///
/// Found once by bisection on the sign of `d p1 / dr` and cached.
pub fn p1_peak() -> (f64, f64) {
    static PEAK: OnceLock<(f64, f64)> = OnceLock::new();
    *PEAK.get_or_init(|| {
        let (mut lo, mut hi) = (1e-3, 5.0);
        debug_assert!(dlog_p1(lo) > 0.0 && dlog_p1(hi) < 0.0);
        for _ in 0..MAX_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if dlog_p1(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= ROOT_REL_TOL * lo {
                break;
            }
        }
        let r = 0.5 * (lo + hi);
        (r, curve(r).p1)
    })
}

/// Boundary `p2` above a measured `p1`, with the squeezing root: `(p2, r)`.
///
/// The root is taken on the ascending branch `(0, r_peak]`, where `p1(r)` is
/// monotone, by bisection to a relative width of [`ROOT_REL_TOL`].
pub fn boundary_p2_at_p1(p1_meas: f64) -> Result<(f64, f64), WitnessError> {
    if p1_meas.is_nan() || p1_meas <= 0.0 {
        return Err(WitnessError::NonPositiveP1(p1_meas));
    }
    let (r_peak, p1_max) = p1_peak();
    if p1_meas > p1_max {
        return Err(WitnessError::OutOfReach { p1: p1_meas, p1_max });
    }
    let (mut lo, mut hi) = (0.0, r_peak);
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if curve(mid).p1 < p1_meas {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= ROOT_REL_TOL * hi {
            break;
        }
    }
    let r = 0.5 * (lo + hi);
    Ok((curve(r).p2, r))
}

/// Evaluates the witness for a set of photon statistics.
///
/// Low-count inputs (no three-fold events) still get a number but are
/// classified [`Side::Indeterminate`]. A `p1` above the curve maximum is
/// reported as non-Gaussian with an infinite witness.
pub fn witness(stats: &PhotonStats) -> Result<WitnessResult, WitnessError> {
    if stats.sigma_p2plus.is_nan() || stats.sigma_p2plus <= 0.0 {
        return Err(WitnessError::NonPositiveSigma(stats.sigma_p2plus));
    }
    let (p2_boundary, r) = if stats.p1 <= 0.0 {
        (0.0, 0.0)
    } else {
        match boundary_p2_at_p1(stats.p1) {
            Ok(found) => found,
            Err(WitnessError::OutOfReach { p1, p1_max }) => {
                log::warn!("p1 = {p1} above the boundary maximum {p1_max}; reporting as non-Gaussian");
                let (r_peak, _) = p1_peak();
                let boundary = boundary_point(r_peak)?;
                return Ok(WitnessResult {
                    delta_w_sigma: f64::INFINITY,
                    delta_w_sigma_p1_inclusive: f64::INFINITY,
                    boundary,
                    p2_boundary: boundary.p2,
                    side: if stats.low_count_flag { Side::Indeterminate } else { Side::NonGaussian },
                    out_of_reach: true,
                });
            }
            Err(e) => return Err(e),
        }
    };
    let boundary = boundary_point(r)?;
    let gap = p2_boundary - stats.p2plus;
    let delta_w_sigma = gap / stats.sigma_p2plus;
    let slope = if r > 0.0 { boundary_slope(r) } else { 0.0 };
    let delta_w_sigma_p1_inclusive = gap / stats.sigma_p2plus.hypot(slope * stats.sigma_p1);
    let side = if stats.low_count_flag {
        Side::Indeterminate
    } else if delta_w_sigma > 0.0 {
        Side::NonGaussian
    } else {
        Side::GaussianCompatible
    };
    Ok(WitnessResult { delta_w_sigma, delta_w_sigma_p1_inclusive, boundary, p2_boundary, side, out_of_reach: false })
}

/// `window_ps,p1,p2plus,sigma_p2plus,delta_w_sigma,side`
pub fn witness_csv_row(stats: &PhotonStats, result: &WitnessResult) -> String {
    format!(
        "{},{:.9e},{:.9e},{:.3e},{:.4},{}",
        stats.window_ps().map(|w| w.to_string()).unwrap_or_default(),
        stats.p1,
        stats.p2plus,
        stats.sigma_p2plus,
        result.delta_w_sigma,
        result.side
    )
}

/// `n` log-spaced `(p1, p2_boundary)` samples over `[p1_lo, p1_hi]`.
pub fn sample_boundary(p1_lo: f64, p1_hi: f64, n: usize) -> Result<Vec<(f64, f64)>, WitnessError> {
    let (_, p1_max) = p1_peak();
    if n < 2 {
        return Err(WitnessError::InvalidRange(format!("need at least 2 samples, got {n}")));
    }
    if !(p1_lo > 0.0 && p1_lo < p1_hi && p1_hi <= p1_max) {
        return Err(WitnessError::InvalidRange(format!(
            "require 0 < p1_lo < p1_hi <= {p1_max}, got [{p1_lo}, {p1_hi}]"
        )));
    }
    let (a, b) = (p1_lo.ln(), p1_hi.ln());
    (0..n)
        .map(|i| {
            let p1 = if i == 0 {
                p1_lo
            } else if i == n - 1 {
                p1_hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            };
            boundary_p2_at_p1(p1).map(|(p2, _)| (p1, p2))
        })
        .collect()
}

pub fn write_boundary_csv<W: Write>(samples: &[(f64, f64)], out: &mut W) -> io::Result<()> {
    writeln!(out, "{BOUNDARY_CSV_HEADER}")?;
    for (p1, p2) in samples {
        writeln!(out, "{p1:.9e},{p2:.9e}")?;
    }
    Ok(())
}
