use std::path::PathBuf;

use clap::Args;
use hsps_core::coincidence::{cross_histogram, g2_peak_ratio};
use hsps_core::ngwitness::sample_boundary;
use hsps_core::tagstream::{ChannelRole, ChannelRoles};
use serde::Serialize;
use serde_json::json;

use crate::analyze::StreamArgs;
use crate::error::CliError;
use crate::output::{num, opt_num, render, CsvRecord, OutputFormat, Run};

pub const BOUNDARY_SCHEMA: &str = "hsps.boundary/1";
pub const HISTOGRAM_SCHEMA: &str = "hsps.g2-histogram/1";
pub const G2_SCHEMA: &str = "hsps.g2/1";

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub p1_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    pub p1_hi: f64,
    /// Number of samples, log-spaced in p1.
    #[arg(short, long, default_value_t = 200)]
    pub n: usize,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct BoundaryRow {
    p1: f64,
    p2_boundary: f64,
}

impl CsvRecord for BoundaryRow {
    const HEADER: &'static str = "p1,p2_boundary";

    fn csv_fields(&self) -> Vec<String> {
        vec![num(self.p1), num(self.p2_boundary)]
    }
}

pub fn run_boundary(args: &BoundaryArgs, format: OutputFormat) -> Result<(), CliError> {
    let run = Run::start("boundary", json!({ "p1_lo": args.p1_lo, "p1_hi": args.p1_hi, "n": args.n }));
    let rows: Vec<BoundaryRow> = sample_boundary(args.p1_lo, args.p1_hi, args.n)?
        .into_iter()
        .map(|(p1, p2_boundary)| BoundaryRow { p1, p2_boundary })
        .collect();
    run.emit(args.out.as_deref(), BOUNDARY_SCHEMA, &render(&rows, format)?)
}

#[derive(Debug, Args)]
pub struct G2Args {
    #[command(flatten)]
    pub input: StreamArgs,
    #[arg(long)]
    pub bin_ps: u64,
    /// Histogram half-range; a multiple of the bin width.
    #[arg(long)]
    pub range_ps: u64,
    /// Pulse period; enables the peak-area ratio.
    #[arg(long)]
    pub period_ps: Option<u64>,
    /// Integration span around each peak centre; defaults to the period.
    #[arg(long, requires = "period_ps")]
    pub integration_ps: Option<u64>,
    /// Smallest |peak index| used for normalisation.
    #[arg(long, default_value_t = 2)]
    pub far_min: u32,
    /// Start channel of each delay; defaults to the A channel.
    #[arg(long)]
    pub x: Option<u8>,
    /// Stop channel of each delay; defaults to the B channel.
    #[arg(long)]
    pub y: Option<u8>,
    /// Histogram output; the summary goes to `--out` or stdout.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    bin_start_ps: i64,
    count: u64,
}

impl CsvRecord for HistogramRow {
    const HEADER: &'static str = "bin_start_ps,count";

    fn csv_fields(&self) -> Vec<String> {
        vec![self.bin_start_ps.to_string(), self.count.to_string()]
    }
}

#[derive(Debug, Serialize)]
struct G2Summary {
    x_channel: u8,
    y_channel: u8,
    bin_ps: u64,
    range_ps: u64,
    pairs: u64,
    period_ps: Option<u64>,
    integration_ps: Option<u64>,
    ratio: Option<f64>,
    sigma: Option<f64>,
    center_area: Option<u64>,
    far_mean_area: Option<f64>,
    far_peaks: Option<usize>,
}

impl CsvRecord for G2Summary {
    const HEADER: &'static str =
        "x_channel,y_channel,bin_ps,range_ps,pairs,period_ps,integration_ps,ratio,sigma,center_area,far_mean_area,far_peaks";

    fn csv_fields(&self) -> Vec<String> {
        let opt = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.x_channel.to_string(),
            self.y_channel.to_string(),
            self.bin_ps.to_string(),
            self.range_ps.to_string(),
            self.pairs.to_string(),
            opt(self.period_ps),
            opt(self.integration_ps),
            opt_num(self.ratio),
            opt_num(self.sigma),
            opt(self.center_area),
            opt_num(self.far_mean_area),
            opt(self.far_peaks.map(|n| n as u64)),
        ]
    }
}

fn channel_with(roles: &ChannelRoles, role: ChannelRole, name: &str) -> Result<u8, CliError> {
    let mut found = roles.iter().filter(|&(_, r)| r == role).map(|(c, _)| c);
    match (found.next(), found.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(CliError::Usage(format!("need exactly one {name} channel, or pass it explicitly"))),
    }
}

pub fn run_g2(args: &G2Args, format: OutputFormat, roles: &ChannelRoles) -> Result<(), CliError> {
    let x = match args.x {
        Some(c) => c,
        None => channel_with(roles, ChannelRole::SignalA, "A")?,
    };
    let y = match args.y {
        Some(c) => c,
        None => channel_with(roles, ChannelRole::SignalB, "B")?,
    };
    let integration_ps = args.period_ps.map(|p| args.integration_ps.unwrap_or(p));
    let config = json!({
        "bin_ps": args.bin_ps,
        "range_ps": args.range_ps,
        "period_ps": args.period_ps,
        "integration_ps": integration_ps,
        "far_min": args.far_min,
        "x": x,
        "y": y,
        "channels": roles,
        "duration_ps": args.input.duration_ps,
    });
    let run = Run::start("g2", config).input(&args.input.stream);
    let stream = args.input.load(roles)?;
    let hist = cross_histogram(&stream, x, y, args.bin_ps, args.range_ps)?;
    let ratio = match (args.period_ps, integration_ps) {
        (Some(p), Some(i)) => Some(g2_peak_ratio(&hist, p, i, args.far_min)?),
        _ => None,
    };
    let summary = G2Summary {
        x_channel: x,
        y_channel: y,
        bin_ps: args.bin_ps,
        range_ps: args.range_ps,
        pairs: hist.total(),
        period_ps: args.period_ps,
        integration_ps,
        ratio: ratio.as_ref().map(|r| r.ratio),
        sigma: ratio.as_ref().map(|r| r.sigma),
        center_area: ratio.as_ref().map(|r| r.center_area),
        far_mean_area: ratio.as_ref().map(|r| r.far_mean_area),
        far_peaks: ratio
            .as_ref()
            .map(|r| r.peak_areas.iter().filter(|(k, _)| k.unsigned_abs() >= args.far_min as u64).count()),
    };
    if let Some(path) = &args.histogram {
        let rows: Vec<HistogramRow> = hist
            .counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramRow { bin_start_ps: hist.bin_start(i), count })
            .collect();
        run.emit(Some(path), HISTOGRAM_SCHEMA, &render(&rows, format)?)?;
    }
    run.emit(args.out.as_deref(), G2_SCHEMA, &render(&[summary], format)?)
}
