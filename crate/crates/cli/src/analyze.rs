use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hsps_core::coincidence::{count_periodic, count_triggered, CoincidenceCounts, WindowSpec};
use hsps_core::estimators::{estimate_stats, PhotonStats, SplittingRatio};
use hsps_core::ngwitness::{witness, Side, WitnessResult};
use hsps_core::tagstream::{read_stream_with, ChannelRoles, Format, TagStream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::output::{num, opt_num, render, CsvRecord, OutputFormat, Run};

pub const SCHEMA: &str = "hsps.analyze/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Binary,
    Csv,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Time-tag file: binary (any extension) or `.csv`.
    pub stream: PathBuf,
    /// Overrides the format guessed from the extension.
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    /// Acquisition length for CSV streams without a `.meta.json` sidecar.
    #[arg(long)]
    pub duration_ps: Option<u64>,
}

impl StreamArgs {
    /// Reads the stream and rejects it if it holds no tags.
    pub fn load(&self, roles: &ChannelRoles) -> Result<TagStream, CliError> {
        let format = match self.input_format {
            Some(InputFormat::Binary) => Format::Binary,
            Some(InputFormat::Csv) => Format::Csv,
            None => Format::from_path(&self.stream),
        };
        let stream = read_stream_with(&self.stream, format, roles, self.duration_ps)?;
        if stream.is_empty() {
            return Err(CliError::Data(format!("{} contains no time tags", self.stream.display())));
        }
        Ok(stream)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: StreamArgs,
    /// Coincidence window widths in ps (repeat or comma-separate).
    #[arg(short, long = "window", value_delimiter = ',', required = true)]
    pub windows: Vec<u64>,
    /// Window start relative to each trigger, in ps.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub offset_ps: i64,
    /// Splitter transmission towards detector A.
    #[arg(short, long)]
    pub t: f64,
    /// Use laser-referenced triggers with this period instead of the trigger channel.
    #[arg(long)]
    pub periodic_ps: Option<u64>,
    /// Phase of the first laser-referenced trigger.
    #[arg(long, default_value_t = 0, requires = "periodic_ps")]
    pub phase_ps: u64,
    /// Output file; stdout if omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Trigger {
    Channel,
    Periodic { period_ps: u64, phase_ps: u64 },
}

/// Counts, statistics and witness for one coincidence window.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRow {
    pub window_ns: String,
    pub window_ps: u64,
    pub offset_ps: i64,
    pub r0: u64,
    pub r1a: u64,
    pub r1b: u64,
    pub r2: u64,
    pub p0: f64,
    pub sigma_p0: f64,
    pub p1: f64,
    pub sigma_p1: f64,
    pub p2plus: f64,
    pub sigma_p2plus: f64,
    pub p2_boundary: Option<f64>,
    pub delta_w: Option<f64>,
    pub delta_w_p1_inclusive: Option<f64>,
    pub side: String,
    pub low_count: bool,
    pub p1_clamped: bool,
}

impl AnalysisRow {
    fn new(counts: &CoincidenceCounts, stats: &PhotonStats, w: Option<&WitnessResult>) -> Self {
        Self {
            window_ns: format!("{:.2}", counts.window.width_ps as f64 / 1000.0),
            window_ps: counts.window.width_ps,
            offset_ps: counts.window.offset_ps,
            r0: counts.r0,
            r1a: counts.r1a,
            r1b: counts.r1b,
            r2: counts.r2,
            p0: stats.p0,
            sigma_p0: stats.sigma_p0,
            p1: stats.p1,
            sigma_p1: stats.sigma_p1,
            p2plus: stats.p2plus,
            sigma_p2plus: stats.sigma_p2plus,
            p2_boundary: w.map(|w| w.p2_boundary),
            delta_w: w.map(|w| w.delta_w_sigma),
            delta_w_p1_inclusive: w.map(|w| w.delta_w_sigma_p1_inclusive),
            side: w.map_or(Side::Indeterminate, |w| w.side).to_string(),
            low_count: stats.low_count_flag,
            p1_clamped: stats.p1_clamped,
        }
    }
}

impl CsvRecord for AnalysisRow {
    const HEADER: &'static str = "window_ns,window_ps,offset_ps,r0,r1a,r1b,r2,p0,sigma_p0,p1,sigma_p1,p2plus,\
sigma_p2plus,p2_boundary,delta_w,delta_w_p1_inclusive,side,low_count,p1_clamped";

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.window_ns.clone(),
            self.window_ps.to_string(),
            self.offset_ps.to_string(),
            self.r0.to_string(),
            self.r1a.to_string(),
            self.r1b.to_string(),
            self.r2.to_string(),
            num(self.p0),
            num(self.sigma_p0),
            num(self.p1),
            num(self.sigma_p1),
            num(self.p2plus),
            num(self.sigma_p2plus),
            opt_num(self.p2_boundary),
            opt_num(self.delta_w),
            opt_num(self.delta_w_p1_inclusive),
            self.side.clone(),
            self.low_count.to_string(),
            self.p1_clamped.to_string(),
        ]
    }
}

pub fn windows(widths: &[u64], offset_ps: i64) -> Result<Vec<WindowSpec>, CliError> {
    if widths.is_empty() {
        return Err(CliError::Usage("at least one window is required".into()));
    }
    widths.iter().map(|&w| Ok(WindowSpec::with_offset(w, offset_ps)?)).collect()
}

/// One row per window, in input order; windows are counted in parallel.
pub fn analyze_windows(
    stream: &TagStream,
    windows: &[WindowSpec],
    t: SplittingRatio,
    trigger: Trigger,
) -> Result<Vec<AnalysisRow>, CliError> {
    windows
        .par_iter()
        .map(|&window| {
            let counts = match trigger {
                Trigger::Channel => count_triggered(stream, window)?,
                Trigger::Periodic { period_ps, phase_ps } => count_periodic(stream, window, period_ps, phase_ps)?,
            };
            let stats = estimate_stats(&counts, t)?;
            let w = witness(&stats).ok();
            Ok(AnalysisRow::new(&counts, &stats, w.as_ref()))
        })
        .collect()
}

pub fn run(args: &AnalyzeArgs, format: OutputFormat, roles: &ChannelRoles, seed: Option<u64>) -> Result<(), CliError> {
    let windows = windows(&args.windows, args.offset_ps)?;
    let t = SplittingRatio::new(args.t)?;
    let trigger = match args.periodic_ps {
        Some(period_ps) => Trigger::Periodic { period_ps, phase_ps: args.phase_ps },
        None => Trigger::Channel,
    };
    let config = json!({
        "windows_ps": args.windows,
        "offset_ps": args.offset_ps,
        "t": args.t,
        "trigger": trigger,
        "channels": roles,
        "duration_ps": args.input.duration_ps,
    });
    let run = Run::start("analyze", config).input(&args.input.stream).seed(seed);
    let stream = args.input.load(roles)?;
    let rows = analyze_windows(&stream, &windows, t, trigger)?;
    run.emit(args.out.as_deref(), SCHEMA, &render(&rows, format)?)
}
