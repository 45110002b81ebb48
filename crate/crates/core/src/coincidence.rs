//! Trigger-based coincidence counting and delay histograms.
//!
//! For every trigger at `t0` the window `[t0 + offset, t0 + offset + width)`
//! is inspected on the two signal channels. Each trigger lands in exactly one
//! of four categories: neither arm clicked, only A, only B, or both. Repeated
//! tags on one arm inside the same window count as a single click, and
//! overlapping windows of nearby triggers are evaluated independently.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagstream::{ChannelRole, ChannelRoles, TagStream, TimeTag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoincidenceError {
    #[error("stream lacks a unique {0} channel")]
    MissingRole(&'static str),
    #[error("window width must be positive")]
    ZeroWidth,
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("phase {phase} ps must be smaller than the period {period} ps")]
    PhaseNotNormalized { phase: u64, period: u64 },
    #[error("bin width must be positive")]
    ZeroBin,
    #[error("histogram range {range} ps is not a positive multiple of the bin width {bin} ps")]
    RangeNotMultiple { range: u64, bin: u64 },
    #[error("invalid peak integration: {0}")]
    InvalidIntegration(String),
    #[error("no complete peaks with |index| >= {0} on both sides of zero delay")]
    NoFarPeaks(u32),
    #[error("normalization peaks have zero area")]
    ZeroNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width_ps: u64,
    pub offset_ps: i64,
}

impl WindowSpec {
    pub fn new(width_ps: u64) -> Result<Self, CoincidenceError> {
        Self::with_offset(width_ps, 0)
    }

    pub fn with_offset(width_ps: u64, offset_ps: i64) -> Result<Self, CoincidenceError> {
        if width_ps == 0 {
            return Err(CoincidenceError::ZeroWidth);
        }
        Ok(Self { width_ps, offset_ps })
    }

    /// `[start, end)` for a trigger at `t0`, clipped below at zero.
    /// Returns `None` when the window lies entirely before the stream start.
    fn bounds(&self, t0: u64) -> Option<(u64, u64)> {
        let start = t0 as i128 + self.offset_ps as i128;
        let end = start + self.width_ps as i128;
        if end <= 0 {
            return None;
        }
        let clip = |v: i128| v.clamp(0, u64::MAX as i128) as u64;
        Some((clip(start), clip(end)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSource {
    Channel,
    SyntheticPeriodic { period_ps: u64, phase_ps: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceCounts {
    pub r0: u64,
    pub r1a: u64,
    pub r1b: u64,
    pub r2: u64,
    pub window: WindowSpec,
    pub duration_ps: u64,
    pub trigger_source: TriggerSource,
}

impl CoincidenceCounts {
    /// Counts not tied to a measured stream (for synthetic or published data).
    pub fn from_raw(r0: u64, r1a: u64, r1b: u64, r2: u64) -> Self {
        Self {
            r0,
            r1a,
            r1b,
            r2,
            window: WindowSpec { width_ps: 1, offset_ps: 0 },
            duration_ps: 0,
            trigger_source: TriggerSource::Channel,
        }
    }

    pub fn neither(&self) -> u64 {
        self.r0 - self.r1a - self.r1b - self.r2
    }

    fn add(&mut self, other: &Tally) {
        self.r0 += other.r0;
        self.r1a += other.r1a;
        self.r1b += other.r1b;
        self.r2 += other.r2;
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    r0: u64,
    r1a: u64,
    r1b: u64,
    r2: u64,
}

/// Forward-only scan over the tags of one channel.
///
/// Queries must come with non-decreasing `start`; tags skipped for an earlier
/// query can never satisfy a later one.
struct ChannelCursor<'a> {
    tags: &'a [TimeTag],
    channel: u8,
    idx: usize,
}

impl<'a> ChannelCursor<'a> {
    fn new(tags: &'a [TimeTag], channel: u8, from_time: u64) -> Self {
        let idx = tags.partition_point(|t| t.time_ps < from_time);
        Self { tags, channel, idx }
    }

    fn hit(&mut self, start: u64, end: u64) -> bool {
        while let Some(tag) = self.tags.get(self.idx) {
            if tag.channel == self.channel && tag.time_ps >= start {
                return tag.time_ps < end;
            }
            self.idx += 1;
        }
        false
    }
}

fn tally<I: Iterator<Item = u64>>(triggers: I, tags: &[TimeTag], a: u8, b: u8, window: &WindowSpec) -> Tally {
    let mut out = Tally::default();
    let mut cursors: Option<(ChannelCursor, ChannelCursor)> = None;
    for t0 in triggers {
        out.r0 += 1;
        let Some((start, end)) = window.bounds(t0) else {
            continue;
        };
        let (ca, cb) =
            cursors.get_or_insert_with(|| (ChannelCursor::new(tags, a, start), ChannelCursor::new(tags, b, start)));
        match (ca.hit(start, end), cb.hit(start, end)) {
            (true, true) => out.r2 += 1,
            (true, false) => out.r1a += 1,
            (false, true) => out.r1b += 1,
            (false, false) => {}
        }
    }
    out
}

fn signal_channels(roles: &ChannelRoles) -> Result<(u8, u8), CoincidenceError> {
    let unique = |role, name| {
        let mut it = roles.iter().filter(move |&(_, r)| r == role).map(|(c, _)| c);
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(CoincidenceError::MissingRole(name)),
        }
    };
    Ok((unique(ChannelRole::SignalA, "signal_a")?, unique(ChannelRole::SignalB, "signal_b")?))
}

/// Counts `R0, R1A, R1B, R2` using the stream's trigger channel.
///
/// Windows running past the end of the stream are evaluated as-is, so the last
/// few triggers may see a truncated window.
pub fn count_triggered(stream: &TagStream, window: WindowSpec) -> Result<CoincidenceCounts, CoincidenceError> {
    count_triggered_chunked(stream, window, 1)
}

/// Same as [`count_triggered`] but splits the triggers into `chunks`
/// contiguous groups counted in parallel. The result does not depend on
/// `chunks`.
pub fn count_triggered_chunked(
    stream: &TagStream,
    window: WindowSpec,
    chunks: usize,
) -> Result<CoincidenceCounts, CoincidenceError> {
    if window.width_ps == 0 {
        return Err(CoincidenceError::ZeroWidth);
    }
    let (trigger, a, b) =
        stream.roles().triggered_channels().ok_or(CoincidenceError::MissingRole("trigger/signal_a/signal_b"))?;
    let tags = stream.tags();
    let chunk_len = tags.len().div_ceil(chunks.max(1)).max(1);
    let parts: Vec<Tally> = tags
        .par_chunks(chunk_len)
        .map(|part| {
            let triggers = part.iter().filter(|t| t.channel == trigger).map(|t| t.time_ps);
            tally(triggers, tags, a, b, &window)
        })
        .collect();
    let mut counts = CoincidenceCounts {
        r0: 0,
        r1a: 0,
        r1b: 0,
        r2: 0,
        window,
        duration_ps: stream.duration_ps(),
        trigger_source: TriggerSource::Channel,
    };
    for p in &parts {
        counts.add(p);
    }
    Ok(counts)
}

/// Counts coincidences against laser-referenced triggers at
/// `phase + k * period`, ignoring any trigger channel in the stream.
pub fn count_periodic(
    stream: &TagStream,
    window: WindowSpec,
    period_ps: u64,
    phase_ps: u64,
) -> Result<CoincidenceCounts, CoincidenceError> {
    check_period(period_ps, phase_ps)?;
    if window.width_ps == 0 {
        return Err(CoincidenceError::ZeroWidth);
    }
    let (a, b) = signal_channels(stream.roles())?;
    let duration = stream.duration_ps();
    let triggers = (0..).map(|k: u64| phase_ps + k * period_ps).take_while(|&t| t < duration);
    let t = tally(triggers, stream.tags(), a, b, &window);
    Ok(CoincidenceCounts {
        r0: t.r0,
        r1a: t.r1a,
        r1b: t.r1b,
        r2: t.r2,
        window,
        duration_ps: duration,
        trigger_source: TriggerSource::SyntheticPeriodic { period_ps, phase_ps },
    })
}

fn check_period(period_ps: u64, phase_ps: u64) -> Result<(), CoincidenceError> {
    if period_ps == 0 {
        return Err(CoincidenceError::ZeroPeriod);
    }
    if phase_ps >= period_ps {
        return Err(CoincidenceError::PhaseNotNormalized { phase: phase_ps, period: period_ps });
    }
    Ok(())
}

/// A trigger-only stream with tags at `phase + k * period` below `duration`.
pub fn synth_periodic_triggers(
    period_ps: u64,
    phase_ps: u64,
    duration_ps: u64,
    channel: u8,
) -> Result<TagStream, CoincidenceError> {
    check_period(period_ps, phase_ps)?;
    let tags = (0..)
        .map(|k: u64| phase_ps + k * period_ps)
        .take_while(|&t| t < duration_ps)
        .map(|t| TimeTag::new(channel, t))
        .collect();
    let mut roles = std::collections::BTreeMap::new();
    roles.insert(channel, ChannelRole::Trigger);
    let stream = TagStream::new(tags, duration_ps, ChannelRoles::new(roles)).expect("periodic tags are sorted");
    Ok(stream.with_meta("trigger_source", format!("periodic:{period_ps}:{phase_ps}")))
}

/// Counts of `t_y - t_x` over `[-range, range)` in bins of `bin_ps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayHistogram {
    pub bin_ps: u64,
    pub range_ps: u64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    pub fn bin_start(&self, index: usize) -> i64 {
        index as i64 * self.bin_ps as i64 - self.range_ps as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "bin_start_ps,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{}", self.bin_start(i), c)?;
        }
        Ok(())
    }
}

/// Histogram of delays from each `ch_x` tag to every `ch_y` tag within
/// `±range_ps`. When `ch_x == ch_y` a tag is not paired with itself.
pub fn cross_histogram(
    stream: &TagStream,
    ch_x: u8,
    ch_y: u8,
    bin_ps: u64,
    range_ps: u64,
) -> Result<DelayHistogram, CoincidenceError> {
    if bin_ps == 0 {
        return Err(CoincidenceError::ZeroBin);
    }
    if range_ps == 0 || !range_ps.is_multiple_of(bin_ps) {
        return Err(CoincidenceError::RangeNotMultiple { range: range_ps, bin: bin_ps });
    }
    let nbins = (2 * range_ps / bin_ps) as usize;
    let mut counts = vec![0u64; nbins];
    let tags = stream.tags();
    let range = range_ps as i64;
    let bin = bin_ps as i64;
    let mut lo = 0usize;
    for (i, x) in tags.iter().enumerate() {
        if x.channel != ch_x {
            continue;
        }
        let from = x.time_ps.saturating_sub(range_ps);
        while lo < tags.len() && tags[lo].time_ps < from {
            lo += 1;
        }
        for (j, y) in tags.iter().enumerate().skip(lo) {
            let dt = y.time_ps as i64 - x.time_ps as i64;
            if dt >= range {
                break;
            }
            if y.channel != ch_y || j == i {
                continue;
            }
            let b = (dt + range).div_euclid(bin) as usize;
            counts[b] += 1;
        }
    }
    Ok(DelayHistogram { bin_ps, range_ps, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRatio {
    pub ratio: f64,
    pub sigma: f64,
    pub center_area: u64,
    pub far_mean_area: f64,
    /// `(peak index, integrated area)` for every peak fully inside the range.
    pub peak_areas: Vec<(i64, u64)>,
}

impl PeakRatio {
    pub fn area(&self, index: i64) -> Option<u64> {
        self.peak_areas.iter().find(|&&(k, _)| k == index).map(|&(_, a)| a)
    }
}

/// Zero-delay peak area over the mean area of the far peaks.
///
/// Peak `k` sits at delay `k * period_ps`; its area is the sum of bins whose
/// centre falls in `[k*P - I/2, k*P + I/2)`. Peaks with
/// `|k| >= far_peak_min_index` whose integration span lies inside the
/// histogram are the normalisation set. The uncertainty treats all areas as
/// independent Poisson counts.
pub fn g2_peak_ratio(
    hist: &DelayHistogram,
    period_ps: u64,
    integration_ps: u64,
    far_peak_min_index: u32,
) -> Result<PeakRatio, CoincidenceError> {
    if period_ps == 0 {
        return Err(CoincidenceError::ZeroPeriod);
    }
    if integration_ps == 0 || integration_ps > period_ps {
        return Err(CoincidenceError::InvalidIntegration(format!(
            "integration {integration_ps} ps must lie in (0, period {period_ps} ps]"
        )));
    }
    let period = period_ps as i64;
    let half = integration_ps as i64 / 2;
    let range = hist.range_ps as i64;
    let kmax = range / period + 1;
    let mut peak_areas = Vec::new();
    for k in -kmax..=kmax {
        let lo = k * period - half;
        let hi = lo + integration_ps as i64;
        if lo < -range || hi > range {
            continue;
        }
        // Bin i has doubled centre 2*i*bin - 2*range + bin.
        let bin2 = 2 * hist.bin_ps as i64;
        let first_at_or_above = |edge: i64| (2 * edge + 2 * range - hist.bin_ps as i64 + bin2 - 1).div_euclid(bin2);
        let i_lo = first_at_or_above(lo).clamp(0, hist.counts.len() as i64) as usize;
        let i_hi = first_at_or_above(hi).clamp(0, hist.counts.len() as i64) as usize;
        let area = hist.counts[i_lo..i_hi.max(i_lo)].iter().sum();
        peak_areas.push((k, area));
    }
    let far_min = far_peak_min_index as i64;
    let has_side = |sign: i64| peak_areas.iter().any(|&(k, _)| k * sign >= far_min && far_min > 0);
    if !has_side(1) || !has_side(-1) {
        return Err(CoincidenceError::NoFarPeaks(far_peak_min_index));
    }
    let far: Vec<u64> = peak_areas.iter().filter(|&&(k, _)| k.abs() >= far_min).map(|&(_, a)| a).collect();
    let far_sum: u64 = far.iter().sum();
    if far_sum == 0 {
        return Err(CoincidenceError::ZeroNormalization);
    }
    let far_mean = far_sum as f64 / far.len() as f64;
    let center = peak_areas.iter().find(|&&(k, _)| k == 0).map_or(0, |&(_, a)| a);
    let ratio = center as f64 / far_mean;
    let sigma = if center > 0 { ratio * (1.0 / center as f64 + 1.0 / far_sum as f64).sqrt() } else { 1.0 / far_mean };
    Ok(PeakRatio { ratio, sigma, center_area: center, far_mean_area: far_mean, peak_areas })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(tags: &[(u8, u64)], duration: u64) -> TagStream {
        let tags = tags.iter().map(|&(c, t)| TimeTag::new(c, t)).collect();
        TagStream::new(tags, duration, ChannelRoles::default()).unwrap()
    }

    fn w(width: u64) -> WindowSpec {
        WindowSpec::new(width).unwrap()
    }

    #[test]
    fn empty_stream_counts_zero() {
        let c = count_triggered(&TagStream::empty(100, ChannelRoles::default()), w(10)).unwrap();
        assert_eq!((c.r0, c.r1a, c.r1b, c.r2), (0, 0, 0, 0));
    }

    #[test]
    fn half_open_window() {
        let c = count_triggered(&stream(&[(0, 0), (1, 500)], 2000), w(1000)).unwrap();
        assert_eq!((c.r0, c.r1a, c.r1b, c.r2), (1, 1, 0, 0));
        let c = count_triggered(&stream(&[(0, 0), (1, 1000)], 2000), w(1000)).unwrap();
        assert_eq!((c.r0, c.r1a, c.r1b, c.r2), (1, 0, 0, 0));
        // a signal tied with the trigger is inside
        let c = count_triggered(&stream(&[(1, 0), (0, 0), (2, 999)], 2000), w(1000)).unwrap();
        assert_eq!((c.r0, c.r1a, c.r1b, c.r2), (1, 0, 0, 1));
    }

    #[test]
    fn categories_are_exclusive() {
        let s = stream(&[(0, 0), (1, 5), (1, 6), (2, 7), (0, 100), (2, 101), (0, 200), (0, 300), (1, 301)], 400);
        let c = count_triggered(&s, w(10)).unwrap();
        assert_eq!((c.r0, c.r1a, c.r1b, c.r2), (4, 1, 1, 1));
        assert_eq!(c.neither(), 1);
    }

    #[test]
    fn overlapping_windows_reuse_signals() {
        let s = stream(&[(0, 0), (0, 2), (1, 5)], 100);
        let c = count_triggered(&s, w(10)).unwrap();
        assert_eq!((c.r0, c.r1a), (2, 2));
    }

    #[test]
    fn offsets_shift_window() {
        let s = stream(&[(1, 3), (0, 10), (2, 25)], 100);
        let c = count_triggered(&s, WindowSpec::with_offset(10, -8).unwrap()).unwrap();
        assert_eq!((c.r1a, c.r1b), (1, 0));
        let c = count_triggered(&s, WindowSpec::with_offset(10, 10).unwrap()).unwrap();
        assert_eq!((c.r1a, c.r1b), (0, 1));
        // window entirely before t = 0
        let s = stream(&[(1, 0), (0, 1)], 100);
        let c = count_triggered(&s, WindowSpec::with_offset(2, -5).unwrap()).unwrap();
        assert_eq!((c.r0, c.r1a), (1, 0));
    }

    #[test]
    fn missing_roles_rejected() {
        let roles = ChannelRoles::parse("trigger=0,a=1").unwrap();
        let s = TagStream::empty(10, roles);
        assert!(matches!(count_triggered(&s, w(1)), Err(CoincidenceError::MissingRole(_))));
        assert_eq!(WindowSpec::new(0), Err(CoincidenceError::ZeroWidth));
    }

    #[test]
    fn periodic_triggers() {
        let s = synth_periodic_triggers(11905, 0, 119_050, 0).unwrap();
        assert_eq!(s.len(), 10);
        let s = synth_periodic_triggers(10, 5, 20, 0).unwrap();
        let times: Vec<u64> = s.tags().iter().map(|t| t.time_ps).collect();
        assert_eq!(times, vec![5, 15]);
        assert!(matches!(synth_periodic_triggers(10, 10, 20, 0), Err(CoincidenceError::PhaseNotNormalized { .. })));
        assert_eq!(synth_periodic_triggers(0, 0, 20, 0).unwrap_err(), CoincidenceError::ZeroPeriod);
    }

    #[test]
    fn count_periodic_matches_merged_triggers() {
        let signals = stream(&[(1, 3), (2, 4), (1, 14), (2, 27), (1, 33)], 40);
        let direct = count_periodic(&signals, w(5), 10, 2).unwrap();
        assert_eq!((direct.r0, direct.r1a, direct.r1b, direct.r2), (4, 2, 0, 1));
    }

    #[test]
    fn histogram_basics() {
        let s = stream(&[(1, 0), (2, 3)], 10);
        let h = cross_histogram(&s, 1, 2, 1, 5).unwrap();
        assert_eq!(h.counts.len(), 10);
        assert_eq!(h.total(), 1);
        let idx = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.bin_start(idx), 3);
        let h = cross_histogram(&s, 0, 2, 1, 5).unwrap();
        assert_eq!(h.total(), 0);
        assert!(matches!(cross_histogram(&s, 1, 2, 2, 5), Err(CoincidenceError::RangeNotMultiple { .. })));
        assert_eq!(cross_histogram(&s, 1, 2, 0, 5).unwrap_err(), CoincidenceError::ZeroBin);
    }

    #[test]
    fn histogram_negative_delays_and_autocorrelation() {
        let s = stream(&[(2, 10), (1, 13), (1, 14)], 20);
        let h = cross_histogram(&s, 1, 2, 2, 6).unwrap();
        // delays -3 and -4 land in bins [-4,-2)
        assert_eq!(h.counts[1], 2);
        let auto = cross_histogram(&s, 1, 1, 1, 2).unwrap();
        assert_eq!(auto.total(), 2);
        assert_eq!(auto.counts[1], 1);
        assert_eq!(auto.counts[3], 1);
    }

    #[test]
    fn histogram_csv() {
        let s = stream(&[(1, 0), (2, 1)], 10);
        let h = cross_histogram(&s, 1, 2, 1, 2).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bin_start_ps,count\n-2,0\n-1,0\n0,0\n1,1\n");
    }

    fn comb(peaks: &[(i64, u64)], period: i64, range: u64) -> DelayHistogram {
        let mut counts = vec![0; 2 * range as usize];
        for &(k, c) in peaks {
            counts[(k * period + range as i64) as usize] = c;
        }
        DelayHistogram { bin_ps: 1, range_ps: range, counts }
    }

    #[test]
    fn peak_ratio_symmetry_cases() {
        let same: Vec<(i64, u64)> = (-4..=4).map(|k| (k, 50)).collect();
        let r = g2_peak_ratio(&comb(&same, 100, 450), 100, 20, 2).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.peak_areas.len(), 9);
        let mut zero = same.clone();
        zero[4].1 = 0;
        let r = g2_peak_ratio(&comb(&zero, 100, 450), 100, 20, 2).unwrap();
        assert_eq!(r.ratio, 0.0);
        assert!(r.sigma > 0.0);
    }

    #[test]
    fn peak_ratio_errors() {
        let h = comb(&[(0, 5)], 100, 450);
        assert_eq!(g2_peak_ratio(&h, 100, 20, 2).unwrap_err(), CoincidenceError::ZeroNormalization);
        assert_eq!(g2_peak_ratio(&h, 100, 20, 6).unwrap_err(), CoincidenceError::NoFarPeaks(6));
        assert!(matches!(g2_peak_ratio(&h, 100, 200, 2), Err(CoincidenceError::InvalidIntegration(_))));
    }
}
