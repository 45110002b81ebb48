use rand::Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};

use super::{
    check_non_negative, check_positive, check_probability, finish_stream, period_ps, push_dark_counts, rng_for,
    NoClick, OracleStats, SimError, TriggerClass, TriggerMode, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL, TRIGGER_CHANNEL,
};
use crate::coincidence::WindowSpec;
use crate::tagstream::{TagStream, TimeTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairDistribution {
    #[default]
    Poisson,
}

/// Pulsed pair source with a heralding arm and an attenuated, split partner
/// arm. Pair numbers per pulse are Poisson with mean `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdcConfig {
    pub duration_ps: u64,
    pub seed: u64,
    pub rep_rate_hz: f64,
    pub mu: f64,
    pub pair_distribution: PairDistribution,
    pub eta_herald: f64,
    pub eta_idler: f64,
    /// Extra transmission in the partner arm, swept to tune the one-photon
    /// component.
    pub attenuation: f64,
    pub splitter_t: f64,
    pub dark_hz: f64,
    /// Arrival delay of the partner photon after its herald.
    pub idler_delay_ps: u64,
}

impl Default for SpdcConfig {
    fn default() -> Self {
        Self {
            duration_ps: 20_000_000_000,
            seed: 0,
            rep_rate_hz: 84e6,
            mu: 0.003,
            pair_distribution: PairDistribution::Poisson,
            eta_herald: 0.37,
            eta_idler: 0.14,
            attenuation: 1.0,
            splitter_t: 0.5,
            dark_hz: 500.0,
            idler_delay_ps: 100,
        }
    }
}

/// Mean numbers of pairs per pulse by herald outcome and partner fate.
struct Rates {
    herald_a: f64,
    herald_b: f64,
    herald_lost: f64,
    quiet_a: f64,
    quiet_b: f64,
}

impl SpdcConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ps == 0 {
            return Err(SimError::InvalidConfig("duration_ps must be positive".into()));
        }
        check_positive("rep_rate_hz", self.rep_rate_hz)?;
        if period_ps(self.rep_rate_hz) == 0 {
            return Err(SimError::InvalidConfig("rep_rate_hz exceeds 1 THz".into()));
        }
        check_non_negative("mu", self.mu)?;
        check_probability("eta_herald", self.eta_herald)?;
        check_probability("eta_idler", self.eta_idler)?;
        check_probability("attenuation", self.attenuation)?;
        check_probability("splitter_t", self.splitter_t)?;
        check_non_negative("dark_hz", self.dark_hz)
    }

    pub fn period_ps(&self) -> u64 {
        period_ps(self.rep_rate_hz)
    }

    fn partner_transmission(&self) -> f64 {
        self.attenuation * self.eta_idler
    }

    fn rates(&self) -> Rates {
        let q = self.partner_transmission();
        let (h, t) = (self.eta_herald, self.splitter_t);
        Rates {
            herald_a: self.mu * h * q * t,
            herald_b: self.mu * h * q * (1.0 - t),
            herald_lost: self.mu * h * (1.0 - q),
            quiet_a: self.mu * (1.0 - h) * q * t,
            quiet_b: self.mu * (1.0 - h) * q * (1.0 - t),
        }
    }

    pub(crate) fn simulate(&self) -> TagStream {
        let mut rng = rng_for(self.seed);
        let period = self.period_ps();
        let q = self.partner_transmission();
        let seen = 1.0 - (1.0 - self.eta_herald) * (1.0 - q);
        let lambda = self.mu * seen;
        let mut tags = Vec::new();
        let p_pulse = -(-lambda).exp_m1();
        if p_pulse > 0.0 {
            let skip = Geometric::new(p_pulse).expect("probability in range");
            let pulses = self.duration_ps.div_ceil(period);
            let mut k = 0u64;
            loop {
                k = k.saturating_add(rng.sample(skip));
                if k >= pulses {
                    break;
                }
                let t0 = k * period;
                let n = zero_truncated_poisson(&mut rng, lambda);
                let (mut herald, mut a, mut b) = (false, false, false);
                for _ in 0..n {
                    let u = rng.random::<f64>() * seen;
                    let only_h = self.eta_herald * (1.0 - q);
                    let only_i = (1.0 - self.eta_herald) * q;
                    let (h, i) = if u < only_h {
                        (true, false)
                    } else if u < only_h + only_i {
                        (false, true)
                    } else {
                        (true, true)
                    };
                    herald |= h;
                    if i {
                        if rng.random::<f64>() < self.splitter_t {
                            a = true;
                        } else {
                            b = true;
                        }
                    }
                }
                if herald {
                    tags.push(TimeTag::new(TRIGGER_CHANNEL, t0));
                }
                let t_idler = t0 + self.idler_delay_ps;
                if a {
                    tags.push(TimeTag::new(SIGNAL_A_CHANNEL, t_idler));
                }
                if b {
                    tags.push(TimeTag::new(SIGNAL_B_CHANNEL, t_idler));
                }
                k += 1;
            }
        }
        for ch in [TRIGGER_CHANNEL, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL] {
            push_dark_counts(&mut rng, &mut tags, ch, self.dark_hz, self.duration_ps);
        }
        finish_stream(tags, self.duration_ps, "spdc", self.seed)
    }

    /// No-click probabilities for `n` unconditioned pulses' partners in the window.
    fn background(&self, n: f64) -> NoClick {
        let r = self.rates();
        let la = r.herald_a + r.quiet_a;
        let lb = r.herald_b + r.quiet_b;
        NoClick { a: (-la * n).exp(), b: (-lb * n).exp(), ab: (-(la + lb) * n).exp() }
    }

    /// No-click probabilities for the heralding pulse's own partners.
    fn own_pulse(&self) -> NoClick {
        let r = self.rates();
        let heralded = -(-self.mu * self.eta_herald).exp_m1();
        let with_herald = |excluded: f64, remaining: f64| (-excluded).exp() * -(-remaining).exp_m1() / heralded;
        NoClick {
            a: (-r.quiet_a).exp() * with_herald(r.herald_a, r.herald_b + r.herald_lost),
            b: (-r.quiet_b).exp() * with_herald(r.herald_b, r.herald_a + r.herald_lost),
            ab: (-(r.quiet_a + r.quiet_b)).exp() * with_herald(r.herald_a + r.herald_b, r.herald_lost),
        }
    }

    /// Partner arrival instants `j * P + delay - phase` inside `[off, off + w)`.
    fn instants_in_window(&self, phase: i64, off: i64, w: i64, skip_own: bool) -> f64 {
        let p = self.period_ps() as i64;
        let d = self.idler_delay_ps as i64 - phase;
        let lo = (off - d).div_euclid(p) - 1;
        let hi = (off + w - d).div_euclid(p) + 1;
        (lo..=hi)
            .filter(|&j| !(skip_own && j == 0))
            .filter(|&j| {
                let x = j * p + d;
                x >= off && x < off + w
            })
            .count() as f64
    }

    pub(crate) fn oracle(&self, window: WindowSpec, mode: TriggerMode) -> Result<OracleStats, SimError> {
        let p = self.period_ps() as f64;
        let duration = self.duration_ps as f64;
        let off = window.offset_ps;
        let w = window.width_ps as i64;
        let dark = NoClick::dark(self.dark_hz, w as f64);
        let mut classes = Vec::new();
        match mode {
            TriggerMode::Herald => {
                let pulses = (duration / p).ceil();
                let heralds = pulses * -(-self.mu * self.eta_herald).exp_m1();
                if heralds > 0.0 {
                    let own_in = {
                        let d = self.idler_delay_ps as i64;
                        d >= off && d < off + w
                    };
                    let own = if own_in { self.own_pulse() } else { NoClick::CERTAIN };
                    let others = self.instants_in_window(0, off, w, true);
                    classes
                        .push(TriggerClass { expected: heralds, no_click: own.and(self.background(others)).and(dark) });
                }
                let dark_triggers = self.dark_hz * 1e-12 * duration;
                if dark_triggers > 0.0 {
                    let m = (w as f64 / p).floor();
                    let frac = w as f64 / p - m;
                    let nc = self.background(m).scale(1.0 - frac) + self.background(m + 1.0).scale(frac);
                    classes.push(TriggerClass { expected: dark_triggers, no_click: nc.and(dark) });
                }
            }
            TriggerMode::Periodic { phase_ps } => {
                let phase = phase_ps as f64;
                let triggers = if phase < duration { ((duration - phase) / p).ceil() } else { 0.0 };
                let n = self.instants_in_window(phase_ps as i64, off, w, false);
                classes.push(TriggerClass { expected: triggers, no_click: self.background(n).and(dark) });
            }
        }
        OracleStats::from_classes(&classes, self.splitter_t)
    }
}

/// Poisson(`lambda`) conditioned on being at least one, by inversion.
fn zero_truncated_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u32 {
    let u = rng.random::<f64>();
    let mut k = 1u32;
    let mut pk = lambda / lambda.exp_m1();
    let mut cum = pk;
    while u >= cum && pk > 0.0 {
        k += 1;
        pk *= lambda / k as f64;
        cum += pk;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::count_triggered;
    use rand::SeedableRng;

    #[test]
    fn truncated_poisson_mean() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let lambda = 0.8;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| zero_truncated_poisson(&mut rng, lambda) as f64).sum::<f64>() / n as f64;
        let expected = lambda / (1.0 - (-lambda).exp());
        assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn own_pulse_reduces_to_single_pair_limit() {
        let cfg = SpdcConfig { mu: 1e-6, ..Default::default() };
        let own = cfg.own_pulse();
        let q = cfg.partner_transmission();
        assert!((1.0 - own.a - q * cfg.splitter_t).abs() < 1e-6);
        assert!(own.categories().both < 1e-6);
    }

    #[test]
    fn counts_match_oracle() {
        let cfg = SpdcConfig { duration_ps: 2_000_000_000, mu: 0.05, eta_idler: 0.5, ..Default::default() };
        let s = cfg.simulate();
        let window = WindowSpec::new(1000).unwrap();
        let c = count_triggered(&s, window).unwrap();
        let o = cfg.oracle(window, TriggerMode::Herald).unwrap();
        for (got, want) in [(c.r0, o.expected_r0), (c.r1a, o.expected_r1a), (c.r2, o.expected_r2)] {
            assert!((got as f64 - want).abs() < 5.0 * want.sqrt() + 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn instants_counting() {
        let cfg = SpdcConfig::default();
        let p = cfg.period_ps() as i64;
        assert_eq!(cfg.instants_in_window(0, 0, 1000, false), 1.0);
        assert_eq!(cfg.instants_in_window(0, 0, 1000, true), 0.0);
        assert_eq!(cfg.instants_in_window(0, 0, 3 * p, true), 2.0);
        assert_eq!(cfg.instants_in_window(200, -p, p, false), 1.0);
    }

    #[test]
    fn deterministic() {
        let cfg = SpdcConfig { duration_ps: 100_000_000, ..Default::default() };
        assert_eq!(cfg.simulate().tags(), cfg.simulate().tags());
    }
}
