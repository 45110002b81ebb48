use rand::Rng;
use rand_distr::Exp1;

use super::{check_non_negative, check_positive, SimError};

/// Two-state on/off blinking with exponential dwell times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blinking {
    pub tau_on_ps: f64,
    pub tau_off_ps: f64,
}

pub(crate) const DEFAULT_TAU_ON_PS: f64 = 1e6;
pub(crate) const DEFAULT_TAU_OFF_PS: f64 = 2e6;

impl Default for Blinking {
    fn default() -> Self {
        Self { tau_on_ps: DEFAULT_TAU_ON_PS, tau_off_ps: DEFAULT_TAU_OFF_PS }
    }
}

impl Blinking {
    /// `None` when the emitter never switches off.
    pub fn from_dwell(tau_on_ps: f64, tau_off_ps: f64) -> Option<Self> {
        (tau_off_ps > 0.0).then_some(Self { tau_on_ps, tau_off_ps })
    }

    pub fn on_fraction(&self) -> f64 {
        self.tau_on_ps / (self.tau_on_ps + self.tau_off_ps)
    }

    /// Relaxation rate of the telegraph, per ps.
    pub fn relaxation_rate(&self) -> f64 {
        1.0 / self.tau_on_ps + 1.0 / self.tau_off_ps
    }

    /// `[[P(off→off), P(off→on)], [P(on→off), P(on→on)]]` after `dt_ps`.
    pub fn transfer(&self, dt_ps: f64) -> [[f64; 2]; 2] {
        let f = self.on_fraction();
        let decay = (-self.relaxation_rate() * dt_ps).exp();
        let on_on = f + (1.0 - f) * decay;
        let off_on = f * (1.0 - decay);
        [[1.0 - off_on, off_on], [1.0 - on_on, on_on]]
    }
}

/// Checks dwell times and that an explicit duty cycle agrees with them.
pub(crate) fn validate_blinking(tau_on_ps: f64, tau_off_ps: f64, on_fraction: Option<f64>) -> Result<(), SimError> {
    check_positive("tau_on_ps", tau_on_ps)?;
    check_non_negative("tau_off_ps", tau_off_ps)?;
    if let Some(f) = on_fraction {
        let implied = Blinking::from_dwell(tau_on_ps, tau_off_ps).map_or(1.0, |b| b.on_fraction());
        if (f - implied).abs() > 1e-9 * implied.max(1e-300) {
            return Err(SimError::InvalidConfig(format!(
                "on_fraction = {f} disagrees with the blinking dwell times ({implied})"
            )));
        }
    }
    Ok(())
}

/// Samples the on intervals of a stationary telegraph over `[0, duration)`.
pub(crate) fn on_intervals<R: Rng>(rng: &mut R, blinking: Option<Blinking>, duration: f64) -> Vec<(f64, f64)> {
    let Some(b) = blinking else {
        return vec![(0.0, duration)];
    };
    let mut out = Vec::new();
    let mut on = rng.random::<f64>() < b.on_fraction();
    let mut t = 0.0;
    while t < duration {
        let tau = if on { b.tau_on_ps } else { b.tau_off_ps };
        let end = (t + tau * rng.sample::<f64, _>(Exp1)).min(duration);
        if on {
            out.push((t, end));
        }
        t = end;
        on = !on;
    }
    out
}

/// Probability of no click over a sequence of pulses with a telegraph gate.
///
/// `start` is the `[off, on]` distribution at the first pulse, `step` the
/// one-period transfer matrix and `q[i]` the click probability at pulse `i`
/// given the emitter is on.
pub(crate) fn gated_no_click(start: [f64; 2], step: &[[f64; 2]; 2], q: impl IntoIterator<Item = f64>) -> f64 {
    let mut v = start;
    for (i, qi) in q.into_iter().enumerate() {
        if i > 0 {
            v = [v[0] * step[0][0] + v[1] * step[1][0], v[0] * step[0][1] + v[1] * step[1][1]];
        }
        v[1] *= 1.0 - qi;
    }
    v[0] + v[1]
}
