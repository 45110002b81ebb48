use rand::Rng;
use rand_distr::{Exp1, Geometric};
use serde::{Deserialize, Serialize};

use super::quadrature::integrate;
use super::telegraph::{
    gated_no_click, on_intervals, validate_blinking, Blinking, DEFAULT_TAU_OFF_PS, DEFAULT_TAU_ON_PS,
};
use super::{
    check_non_negative, check_positive, check_probability, finish_stream, period_ps, push_dark_counts, rng_for,
    NoClick, OracleStats, SimError, TriggerClass, TriggerMode, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL, TRIGGER_CHANNEL,
};
use crate::coincidence::WindowSpec;
use crate::tagstream::{TagStream, TimeTag};

/// Lifetimes beyond which emission tails are dropped from the oracle.
const TAIL_LIFETIMES: f64 = 40.0;

/// Pulsed quantum-dot cascade source.
///
/// Each laser pulse during an on interval excites the biexciton with
/// probability `p_excite`. The biexciton photon (lifetime `tau_xx_ps`) goes to
/// the trigger detector, the exciton photon (lifetime `tau_x_ps`, emitted
/// after the biexciton) to the splitter feeding A and B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QdPulsedConfig {
    pub duration_ps: u64,
    pub seed: u64,
    pub rep_rate_hz: f64,
    pub p_excite: f64,
    /// Mean on dwell of the blinking telegraph.
    pub tau_on_ps: f64,
    /// Mean off dwell; zero disables blinking.
    pub tau_off_ps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub on_fraction: Option<f64>,
    pub tau_x_ps: f64,
    pub tau_xx_ps: f64,
    pub eta_xx: f64,
    pub eta_x: f64,
    pub splitter_t: f64,
    /// Dark count rate of each detector.
    pub dark_hz: f64,
}

impl Default for QdPulsedConfig {
    fn default() -> Self {
        Self {
            duration_ps: 20_000_000_000,
            seed: 0,
            rep_rate_hz: 84e6,
            p_excite: 0.6,
            tau_on_ps: DEFAULT_TAU_ON_PS,
            tau_off_ps: DEFAULT_TAU_OFF_PS,
            on_fraction: None,
            tau_x_ps: 710.0,
            tau_xx_ps: 355.0,
            eta_xx: 0.003,
            eta_x: 0.003,
            splitter_t: 0.54,
            dark_hz: 500.0,
        }
    }
}

impl QdPulsedConfig {
    pub fn blinking(&self) -> Option<Blinking> {
        Blinking::from_dwell(self.tau_on_ps, self.tau_off_ps)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ps == 0 {
            return Err(SimError::InvalidConfig("duration_ps must be positive".into()));
        }
        check_positive("rep_rate_hz", self.rep_rate_hz)?;
        if period_ps(self.rep_rate_hz) == 0 {
            return Err(SimError::InvalidConfig("rep_rate_hz exceeds 1 THz".into()));
        }
        check_probability("p_excite", self.p_excite)?;
        check_probability("eta_xx", self.eta_xx)?;
        check_probability("eta_x", self.eta_x)?;
        check_probability("splitter_t", self.splitter_t)?;
        check_positive("tau_x_ps", self.tau_x_ps)?;
        check_positive("tau_xx_ps", self.tau_xx_ps)?;
        check_non_negative("dark_hz", self.dark_hz)?;
        validate_blinking(self.tau_on_ps, self.tau_off_ps, self.on_fraction)
    }

    pub fn period_ps(&self) -> u64 {
        period_ps(self.rep_rate_hz)
    }

    pub fn on_fraction(&self) -> f64 {
        self.blinking().map_or(1.0, |b| b.on_fraction())
    }

    pub(crate) fn simulate(&self) -> TagStream {
        let mut rng = rng_for(self.seed);
        let period = self.period_ps();
        let mut tags = Vec::new();
        let detect = 1.0 - (1.0 - self.eta_xx) * (1.0 - self.eta_x);
        let p_event = self.p_excite * detect;
        if p_event > 0.0 {
            let skip = Geometric::new(p_event).expect("probability validated");
            for (start, end) in on_intervals(&mut rng, self.blinking(), self.duration_ps as f64) {
                let mut k = (start / period as f64).ceil() as u64;
                loop {
                    k = k.saturating_add(rng.sample(skip));
                    let t0 = k.saturating_mul(period);
                    if t0 as f64 >= end {
                        break;
                    }
                    self.emit_cascade(&mut rng, t0 as f64, detect, &mut tags);
                    k += 1;
                }
            }
        }
        for ch in [TRIGGER_CHANNEL, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL] {
            push_dark_counts(&mut rng, &mut tags, ch, self.dark_hz, self.duration_ps);
        }
        finish_stream(tags, self.duration_ps, "qd_pulsed", self.seed)
    }

    /// One excited pulse, given that at least one of its photons is detected.
    fn emit_cascade<R: Rng>(&self, rng: &mut R, t0: f64, detect: f64, tags: &mut Vec<TimeTag>) {
        let u = rng.random::<f64>() * detect;
        let only_xx = self.eta_xx * (1.0 - self.eta_x);
        let only_x = (1.0 - self.eta_xx) * self.eta_x;
        let (xx_seen, x_seen) = if u < only_xx {
            (true, false)
        } else if u < only_xx + only_x {
            (false, true)
        } else {
            (true, true)
        };
        let t_xx = t0 + self.tau_xx_ps * rng.sample::<f64, _>(Exp1);
        let t_x = t_xx + self.tau_x_ps * rng.sample::<f64, _>(Exp1);
        if xx_seen {
            tags.push(TimeTag::new(TRIGGER_CHANNEL, t_xx as u64));
        }
        if x_seen {
            let ch = if rng.random::<f64>() < self.splitter_t { SIGNAL_A_CHANNEL } else { SIGNAL_B_CHANNEL };
            tags.push(TimeTag::new(ch, t_x as u64));
        }
    }

    /// CDF of the exciton emission time measured from the pulse.
    fn cascade_cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let (a, b) = (self.tau_xx_ps, self.tau_x_ps);
        if (a - b).abs() <= 1e-9 * a.max(b) {
            let x = s / a;
            -(-x).exp_m1() - x * (-x).exp()
        } else {
            1.0 - (a * (-s / a).exp() - b * (-s / b).exp()) / (a - b)
        }
    }

    fn exciton_cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            -(-s / self.tau_x_ps).exp_m1()
        }
    }

    /// Probability that the exciton of a pulse at relative time `x` lands in
    /// `[off, off + w)`.
    fn in_window(&self, x: f64, off: f64, w: f64) -> f64 {
        (self.cascade_cdf(off + w - x) - self.cascade_cdf(off - x)).max(0.0)
    }

    fn reach(&self) -> f64 {
        TAIL_LIFETIMES * (self.tau_xx_ps + self.tau_x_ps)
    }

    fn step(&self) -> [[f64; 2]; 2] {
        match self.blinking() {
            Some(b) => b.transfer(self.period_ps() as f64),
            None => [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    fn arm_units(&self) -> (f64, f64) {
        let u = self.p_excite * self.eta_x;
        (u * self.splitter_t, u * (1.0 - self.splitter_t))
    }

    fn chain(&self, start: [f64; 2], dh: &[f64]) -> NoClick {
        let step = self.step();
        let (ua, ub) = self.arm_units();
        NoClick {
            a: gated_no_click(start, &step, dh.iter().map(|d| ua * d)),
            b: gated_no_click(start, &step, dh.iter().map(|d| ub * d)),
            ab: gated_no_click(start, &step, dh.iter().map(|d| (ua + ub) * d)),
        }
    }

    /// Pulses at `j * P - phi` for `j` in range, starting from the stationary
    /// telegraph.
    fn lattice_no_click(&self, phi: f64, off: f64, w: f64) -> NoClick {
        let p = self.period_ps() as f64;
        let j_lo = ((off + phi - self.reach()) / p).floor() as i64 - 1;
        let j_hi = ((off + w + phi) / p).ceil() as i64 + 1;
        let dh: Vec<f64> = (j_lo..=j_hi).map(|j| self.in_window(j as f64 * p - phi, off, w)).collect();
        let f = self.on_fraction();
        self.chain([1.0 - f, f], &dh)
    }

    /// A herald whose biexciton photon left `e1` after its own pulse.
    fn herald_no_click(&self, e1: f64, off: f64, w: f64, j_lo: i64, j_hi: i64) -> NoClick {
        let p = self.period_ps() as f64;
        let own = self.exciton_cdf(off + w) - self.exciton_cdf(off);
        let cap_a = self.eta_x * self.splitter_t * own;
        let cap_b = self.eta_x * (1.0 - self.splitter_t) * own;
        let forward: Vec<f64> =
            std::iter::once(0.0).chain((1..=j_hi).map(|j| self.in_window(j as f64 * p - e1, off, w))).collect();
        let backward: Vec<f64> =
            std::iter::once(0.0).chain((j_lo..=-1).rev().map(|j| self.in_window(j as f64 * p - e1, off, w))).collect();
        let fwd = self.chain([0.0, 1.0], &forward);
        let bwd = self.chain([0.0, 1.0], &backward);
        NoClick {
            a: (1.0 - cap_a) * fwd.a * bwd.a,
            b: (1.0 - cap_b) * fwd.b * bwd.b,
            ab: (1.0 - cap_a - cap_b) * fwd.ab * bwd.ab,
        }
    }

    pub(crate) fn oracle(&self, window: WindowSpec, mode: TriggerMode) -> Result<OracleStats, SimError> {
        let p = self.period_ps() as f64;
        let w = window.width_ps as f64;
        let duration = self.duration_ps as f64;
        // Tags are floored to whole ps; against a floored trigger the
        // half-open window acts half a ps earlier in continuous time.
        let shift = match mode {
            TriggerMode::Herald => 0.5,
            TriggerMode::Periodic { .. } => 0.0,
        };
        let off = window.offset_ps as f64 - shift;
        let dark = NoClick::dark(self.dark_hz, w);
        let piece = self.tau_xx_ps.min(self.tau_x_ps) / 4.0;
        let mut classes = Vec::new();
        match mode {
            TriggerMode::Herald => {
                let pulses = (duration / p).ceil();
                let heralds = pulses * self.on_fraction() * self.p_excite * self.eta_xx;
                if heralds > 0.0 {
                    let e1_max = TAIL_LIFETIMES * self.tau_xx_ps;
                    let j_lo = ((off - self.reach()) / p).floor() as i64 - 1;
                    let j_hi = ((off + w + e1_max) / p).ceil() as i64 + 1;
                    let breaks = kinks(j_lo, j_hi, p, off, w);
                    let mass = -(-TAIL_LIFETIMES).exp_m1();
                    let nc = integrate(0.0, e1_max, &breaks, piece, NoClick::ZERO, |e1, wt| {
                        let dens = (-e1 / self.tau_xx_ps).exp() / self.tau_xx_ps;
                        self.herald_no_click(e1, off, w, j_lo, j_hi).scale(wt * dens / mass)
                    });
                    classes.push(TriggerClass { expected: heralds, no_click: nc.and(dark) });
                }
                let dark_triggers = self.dark_hz * 1e-12 * duration;
                if dark_triggers > 0.0 {
                    let j_lo = ((off - self.reach()) / p).floor() as i64 - 1;
                    let j_hi = ((off + w + p) / p).ceil() as i64 + 1;
                    let breaks = kinks(j_lo, j_hi, p, off, w);
                    let nc = integrate(0.0, p, &breaks, piece, NoClick::ZERO, |phi, wt| {
                        self.lattice_no_click(phi, off, w).scale(wt / p)
                    });
                    classes.push(TriggerClass { expected: dark_triggers, no_click: nc.and(dark) });
                }
            }
            TriggerMode::Periodic { phase_ps } => {
                let phase = phase_ps as f64;
                let triggers = if phase < duration { ((duration - phase) / p).ceil() } else { 0.0 };
                classes.push(TriggerClass {
                    expected: triggers,
                    no_click: self.lattice_no_click(phase, off, w).and(dark),
                });
            }
        }
        OracleStats::from_classes(&classes, self.splitter_t)
    }
}

/// Values of the integration variable where a pulse's window edge passes
/// through zero delay.
fn kinks(j_lo: i64, j_hi: i64, p: f64, off: f64, w: f64) -> Vec<f64> {
    (j_lo..=j_hi)
        .flat_map(|j| {
            let x = j as f64 * p;
            [x - off - w, x - off]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::count_triggered;

    fn fast() -> QdPulsedConfig {
        QdPulsedConfig { duration_ps: 2_000_000_000, eta_xx: 0.05, eta_x: 0.05, ..Default::default() }
    }

    #[test]
    fn same_seed_same_stream() {
        let a = fast().simulate();
        let b = fast().simulate();
        assert_eq!(a.tags(), b.tags());
        let c = QdPulsedConfig { seed: 1, ..fast() }.simulate();
        assert_ne!(a.tags(), c.tags());
        assert_eq!(a.meta.get("rng").map(String::as_str), Some(super::super::RNG_ALGORITHM));
    }

    #[test]
    fn cascade_cdf_limits() {
        let c = QdPulsedConfig::default();
        assert_eq!(c.cascade_cdf(-1.0), 0.0);
        assert!((c.cascade_cdf(1e6) - 1.0).abs() < 1e-12);
        let eq = QdPulsedConfig { tau_xx_ps: 500.0, tau_x_ps: 500.0, ..Default::default() };
        let near = QdPulsedConfig { tau_xx_ps: 500.0, tau_x_ps: 500.001, ..Default::default() };
        for s in [10.0, 500.0, 3000.0] {
            assert!((eq.cascade_cdf(s) - near.cascade_cdf(s)).abs() < 1e-5);
        }
    }

    #[test]
    fn herald_rate_matches_oracle() {
        let cfg = fast();
        let s = cfg.simulate();
        let window = WindowSpec::new(3000).unwrap();
        let counts = count_triggered(&s, window).unwrap();
        let o = cfg.oracle(window, TriggerMode::Herald).unwrap();
        let sd = o.expected_r0.sqrt();
        assert!((counts.r0 as f64 - o.expected_r0).abs() < 5.0 * sd, "{} vs {}", counts.r0, o.expected_r0);
        let sd1 = o.expected_r1a.sqrt();
        assert!((counts.r1a as f64 - o.expected_r1a).abs() < 5.0 * sd1, "{} vs {}", counts.r1a, o.expected_r1a);
    }

    #[test]
    fn validation() {
        assert!(QdPulsedConfig { p_excite: 1.2, ..Default::default() }.validate().is_err());
        assert!(QdPulsedConfig { tau_x_ps: 0.0, ..Default::default() }.validate().is_err());
        assert!(QdPulsedConfig { duration_ps: 0, ..Default::default() }.validate().is_err());
        assert!(QdPulsedConfig { on_fraction: Some(0.9), ..Default::default() }.validate().is_err());
        assert!(QdPulsedConfig::default().validate().is_ok());
    }
}
