use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::telegraph::{validate_blinking, Blinking, DEFAULT_TAU_OFF_PS, DEFAULT_TAU_ON_PS};
use super::{
    check_non_negative, check_positive, check_probability, finish_stream, push_dark_counts, rng_for, NoClick,
    OracleStats, SimError, TriggerClass, TriggerMode, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL, TRIGGER_CHANNEL,
};
use crate::coincidence::WindowSpec;
use crate::tagstream::{TagStream, TimeTag};

const GROUND: usize = 0;
const EXCITON: usize = 1;
const BIEXCITON: usize = 2;

/// Continuously pumped quantum dot.
///
/// The dot moves ground → biexciton at `pump_rate_hz`, biexciton → exciton
/// emitting the trigger photon, and exciton → ground emitting the signal
/// photon. While in the exciton state it can be re-excited to the biexciton
/// at `reexcite_ratio * pump_rate_hz` (or `reexcite_rate_hz` if given).
/// Pumping and re-excitation only act in the on state of the blinking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QdCwConfig {
    pub duration_ps: u64,
    pub seed: u64,
    pub pump_rate_hz: f64,
    pub reexcite_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reexcite_rate_hz: Option<f64>,
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
    pub dark_hz: f64,
}

impl Default for QdCwConfig {
    fn default() -> Self {
        Self {
            duration_ps: 20_000_000_000,
            seed: 0,
            pump_rate_hz: 5e8,
            reexcite_ratio: 1.0,
            reexcite_rate_hz: None,
            tau_on_ps: DEFAULT_TAU_ON_PS,
            tau_off_ps: DEFAULT_TAU_OFF_PS,
            on_fraction: None,
            tau_x_ps: 710.0,
            tau_xx_ps: 355.0,
            eta_xx: 0.003,
            eta_x: 0.003,
            splitter_t: 0.64,
            dark_hz: 500.0,
        }
    }
}

/// A transition out of a chain state.
struct Move {
    rate: f64,
    to: usize,
    photon: Photon,
}

#[derive(Clone, Copy, PartialEq)]
enum Photon {
    None,
    Biexciton,
    Exciton,
}

impl QdCwConfig {
    pub fn blinking(&self) -> Option<Blinking> {
        Blinking::from_dwell(self.tau_on_ps, self.tau_off_ps)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ps == 0 {
            return Err(SimError::InvalidConfig("duration_ps must be positive".into()));
        }
        check_non_negative("pump_rate_hz", self.pump_rate_hz)?;
        check_non_negative("reexcite_ratio", self.reexcite_ratio)?;
        if let Some(r) = self.reexcite_rate_hz {
            check_non_negative("reexcite_rate_hz", r)?;
        }
        check_probability("eta_xx", self.eta_xx)?;
        check_probability("eta_x", self.eta_x)?;
        check_probability("splitter_t", self.splitter_t)?;
        check_positive("tau_x_ps", self.tau_x_ps)?;
        check_positive("tau_xx_ps", self.tau_xx_ps)?;
        check_non_negative("dark_hz", self.dark_hz)?;
        validate_blinking(self.tau_on_ps, self.tau_off_ps, self.on_fraction)
    }

    pub fn reexcite_rate_hz(&self) -> f64 {
        self.reexcite_rate_hz.unwrap_or(self.reexcite_ratio * self.pump_rate_hz)
    }

    fn blink_states(&self) -> usize {
        if self.blinking().is_some() {
            2
        } else {
            1
        }
    }

    fn n_states(&self) -> usize {
        3 * self.blink_states()
    }

    /// Index of (dot level, blink state); without blinking the dot is always on.
    fn index(&self, level: usize, on: bool) -> usize {
        match self.blinking() {
            Some(_) => 2 * level + usize::from(on),
            None => level,
        }
    }

    fn is_on(&self, state: usize) -> bool {
        self.blinking().is_none() || state % 2 == 1
    }

    fn level(&self, state: usize) -> usize {
        state / self.blink_states()
    }

    fn moves(&self, state: usize) -> Vec<Move> {
        let on = self.is_on(state);
        let level = self.level(state);
        let mut out = Vec::with_capacity(3);
        match level {
            GROUND if on => {
                out.push(Move { rate: self.pump_rate_hz * 1e-12, to: self.index(BIEXCITON, on), photon: Photon::None })
            }
            BIEXCITON => {
                out.push(Move { rate: 1.0 / self.tau_xx_ps, to: self.index(EXCITON, on), photon: Photon::Biexciton })
            }
            EXCITON => {
                out.push(Move { rate: 1.0 / self.tau_x_ps, to: self.index(GROUND, on), photon: Photon::Exciton });
                if on {
                    out.push(Move {
                        rate: self.reexcite_rate_hz() * 1e-12,
                        to: self.index(BIEXCITON, on),
                        photon: Photon::None,
                    });
                }
            }
            _ => {}
        }
        if let Some(b) = self.blinking() {
            let rate = if on { 1.0 / b.tau_on_ps } else { 1.0 / b.tau_off_ps };
            out.push(Move { rate, to: self.index(level, !on), photon: Photon::None });
        }
        out.retain(|m| m.rate > 0.0);
        out
    }

    /// Generator with exciton emissions thinned by `keep`.
    fn generator(&self, keep: f64) -> DMatrix<f64> {
        let n = self.n_states();
        let mut q = DMatrix::zeros(n, n);
        for s in 0..n {
            for m in self.moves(s) {
                q[(s, s)] -= m.rate;
                let scale = if m.photon == Photon::Exciton { keep } else { 1.0 };
                q[(s, m.to)] += m.rate * scale;
            }
        }
        q
    }

    /// Stationary distribution of the chain.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.n_states();
        let mut a = self.generator(1.0).transpose();
        for c in 0..n {
            a[(n - 1, c)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a.lu().solve(&rhs).expect("chain has a unique stationary law");
        pi.iter().map(|p| p.max(0.0)).collect()
    }

    pub(crate) fn simulate(&self) -> TagStream {
        let mut rng = rng_for(self.seed);
        let mut tags = Vec::new();
        let pi = self.stationary();
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut state = pi.len() - 1;
        for (i, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                state = i;
                break;
            }
        }
        let table: Vec<Vec<Move>> = (0..self.n_states()).map(|s| self.moves(s)).collect();
        let duration = self.duration_ps as f64;
        let mut t = 0.0;
        loop {
            let moves = &table[state];
            let total: f64 = moves.iter().map(|m| m.rate).sum();
            if total <= 0.0 {
                break;
            }
            t += rng.sample::<f64, _>(Exp1) / total;
            if t >= duration {
                break;
            }
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = &moves[moves.len() - 1];
            for m in moves {
                if pick < m.rate {
                    chosen = m;
                    break;
                }
                pick -= m.rate;
            }
            match chosen.photon {
                Photon::Biexciton if rng.random::<f64>() < self.eta_xx => {
                    tags.push(TimeTag::new(TRIGGER_CHANNEL, t as u64));
                }
                Photon::Exciton if rng.random::<f64>() < self.eta_x => {
                    let ch = if rng.random::<f64>() < self.splitter_t { SIGNAL_A_CHANNEL } else { SIGNAL_B_CHANNEL };
                    tags.push(TimeTag::new(ch, t as u64));
                }
                _ => {}
            }
            state = chosen.to;
        }
        for ch in [TRIGGER_CHANNEL, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL] {
            push_dark_counts(&mut rng, &mut tags, ch, self.dark_hz, self.duration_ps);
        }
        finish_stream(tags, self.duration_ps, "qd_cw", self.seed)
    }

    fn window_no_click(&self, start: &DVector<f64>, off: f64, w: f64) -> NoClick {
        let n = self.n_states();
        let ones = DVector::from_element(n, 1.0);
        let before = (self.generator(1.0) * off).exp();
        let at_window = before.transpose() * start;
        let survive = |keep: f64| {
            let m = (self.generator(keep) * w).exp();
            (m.transpose() * &at_window).dot(&ones)
        };
        let t = self.splitter_t;
        NoClick {
            a: survive(1.0 - t * self.eta_x),
            b: survive(1.0 - (1.0 - t) * self.eta_x),
            ab: survive(1.0 - self.eta_x),
        }
    }

    pub(crate) fn oracle(&self, window: WindowSpec, mode: TriggerMode) -> Result<OracleStats, SimError> {
        if let TriggerMode::Periodic { .. } = mode {
            return Err(SimError::Unsupported("a cw source has no laser reference".into()));
        }
        // Floored tags shift the effective window half a ps earlier.
        let start_c = window.offset_ps as f64 - 0.5;
        if start_c < -1.0 {
            return Err(SimError::Unsupported("negative window offsets for the cw model".into()));
        }
        let end_c = start_c + window.width_ps as f64;
        let off = start_c.max(0.0);
        let w = end_c - off;
        let n = self.n_states();
        let pi = self.stationary();
        let dark = NoClick::dark(self.dark_hz, window.width_ps as f64);
        let duration = self.duration_ps as f64;
        let mut classes = Vec::new();

        let mut palm = DVector::zeros(n);
        let mut weight = 0.0;
        for on in [false, true] {
            if !on && self.blinking().is_none() {
                continue;
            }
            let p = pi[self.index(BIEXCITON, on)];
            palm[self.index(EXCITON, on)] += p;
            weight += p;
        }
        let heralds = duration * weight * self.eta_xx / self.tau_xx_ps;
        if heralds > 0.0 {
            palm /= weight;
            classes.push(TriggerClass { expected: heralds, no_click: self.window_no_click(&palm, off, w).and(dark) });
        }
        let dark_triggers = self.dark_hz * 1e-12 * duration;
        if dark_triggers > 0.0 {
            let start = DVector::from_vec(pi);
            classes.push(TriggerClass {
                expected: dark_triggers,
                no_click: self.window_no_click(&start, off, w).and(dark),
            });
        }
        OracleStats::from_classes(&classes, self.splitter_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::count_triggered;

    fn fast() -> QdCwConfig {
        QdCwConfig { duration_ps: 1_000_000_000, eta_xx: 0.05, eta_x: 0.05, ..Default::default() }
    }

    #[test]
    fn stationary_sums_to_one_and_balances() {
        for cfg in [fast(), QdCwConfig { tau_off_ps: 0.0, ..fast() }] {
            let pi = cfg.stationary();
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let q = cfg.generator(1.0);
            let flow = DVector::from_vec(pi).transpose() * q;
            assert!(flow.amax() < 1e-15);
        }
    }

    #[test]
    fn on_fraction_of_stationary() {
        let cfg = fast();
        let pi = cfg.stationary();
        let on: f64 = (0..6).filter(|&s| cfg.is_on(s)).map(|s| pi[s]).sum();
        assert!((on - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        assert_eq!(fast().simulate().tags(), fast().simulate().tags());
    }

    #[test]
    fn counts_match_oracle() {
        let cfg = fast();
        let s = cfg.simulate();
        let window = WindowSpec::new(2000).unwrap();
        let counts = count_triggered(&s, window).unwrap();
        let o = cfg.oracle(window, TriggerMode::Herald).unwrap();
        // Blinking correlates counts over microseconds, so allow generous spread.
        let tol = |e: f64| 8.0 * e.sqrt() + 0.03 * e;
        assert!((counts.r0 as f64 - o.expected_r0).abs() < tol(o.expected_r0), "{counts:?} {o:?}");
        assert!((counts.r1a as f64 - o.expected_r1a).abs() < tol(o.expected_r1a), "{counts:?} {o:?}");
    }

    #[test]
    fn periodic_and_negative_offsets_unsupported() {
        let w = WindowSpec::new(1000).unwrap();
        assert!(fast().oracle(w, TriggerMode::Periodic { phase_ps: 0 }).is_err());
        let neg = WindowSpec::with_offset(1000, -100).unwrap();
        assert!(fast().oracle(neg, TriggerMode::Herald).is_err());
    }
}
