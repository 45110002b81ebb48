use std::path::PathBuf;

use clap::Args;
use hsps_core::coincidence::WindowSpec;
use hsps_core::estimators::SplittingRatio;
use hsps_core::simsource::{oracle_stats, SimError, SourceConfig, SIGNAL_A_CHANNEL, SIGNAL_B_CHANNEL, TRIGGER_CHANNEL};
use hsps_core::tagstream::{write_stream, Format, TagStream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analyze::{analyze_windows, windows, AnalysisRow, Trigger};
use crate::error::CliError;
use crate::output::{num, opt_num, render, CsvRecord, OutputFormat, Run};

pub const SIMULATE_SCHEMA: &str = "hsps.simulate/1";
pub const SWEEP_SCHEMA: &str = "hsps.sweep/1";

const MODELS: [&str; 3] = ["qd_pulsed", "qd_cw", "spdc"];

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Source model; may instead be given as a `model` key in the config file.
    #[arg(long, value_parser = MODELS)]
    pub model: Option<String>,
    /// JSON file with model parameters; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one numeric parameter, e.g. `--set eta_x=0.1` (repeatable).
    #[arg(long = "set", value_parser = parse_assignment)]
    pub overrides: Vec<(String, f64)>,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = value.trim().parse().map_err(|_| format!("{value:?} is not a number"))?;
    Ok((key.trim().to_string(), value))
}

impl ModelArgs {
    /// Resolves the model configuration; `seed` replaces the configured seed.
    pub fn resolve(&self, seed: Option<u64>) -> Result<SourceConfig, CliError> {
        let mut model = self.model.clone();
        let body = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
                let mut value: Value =
                    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                if let Some(tag) = value.as_object_mut().and_then(|o| o.remove("model")) {
                    let tag = tag.as_str().unwrap_or_default().to_string();
                    match &model {
                        Some(m) if *m != tag => {
                            return Err(CliError::Usage(format!(
                                "--model {m} conflicts with model {tag:?} in the config"
                            )))
                        }
                        _ => model = Some(tag),
                    }
                }
                value.to_string()
            }
            None => "{}".to_string(),
        };
        let model = model.ok_or_else(|| CliError::Usage("no model given (--model or a `model` key)".into()))?;
        let mut cfg = SourceConfig::from_json(&model, &body)?;
        for (key, value) in &self.overrides {
            cfg = cfg.with_param(key, *value)?;
        }
        if let Some(seed) = seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output stream; `.csv` writes CSV with a duration sidecar, anything else binary.
    #[arg(short, long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Serialize)]
struct StreamSummary {
    model: String,
    seed: u64,
    duration_ps: u64,
    tags: usize,
    trigger_tags: usize,
    a_tags: usize,
    b_tags: usize,
}

impl StreamSummary {
    fn new(cfg: &SourceConfig, stream: &TagStream) -> Self {
        Self {
            model: cfg.model_name().to_string(),
            seed: cfg.seed(),
            duration_ps: stream.duration_ps(),
            tags: stream.len(),
            trigger_tags: stream.count_on(TRIGGER_CHANNEL),
            a_tags: stream.count_on(SIGNAL_A_CHANNEL),
            b_tags: stream.count_on(SIGNAL_B_CHANNEL),
        }
    }
}

impl CsvRecord for StreamSummary {
    const HEADER: &'static str = "model,seed,duration_ps,tags,trigger_tags,a_tags,b_tags";

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.seed.to_string(),
            self.duration_ps.to_string(),
            self.tags.to_string(),
            self.trigger_tags.to_string(),
            self.a_tags.to_string(),
            self.b_tags.to_string(),
        ]
    }
}

fn config_value(cfg: &SourceConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

pub fn run_simulate(args: &SimulateArgs, format: OutputFormat, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = args.model.resolve(seed)?;
    if args.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let Some(out) = &args.out else {
        return Err(CliError::Usage("--out is required".into()));
    };
    let mut run = Run::start("simulate", config_value(&cfg)).seed(Some(cfg.seed()));
    if let Some(path) = &args.model.config {
        run = run.input(path);
    }
    let stream = cfg.simulate()?;
    write_stream(&stream, out, Format::from_path(out))?;
    run.write_manifest(out, SIMULATE_SCHEMA)?;
    let summary = render(&[StreamSummary::new(&cfg, &stream)], format)?;
    run.emit(None, SIMULATE_SCHEMA, &summary)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter to sweep, e.g. `pump_rate_hz` or `attenuation`.
    #[arg(long)]
    pub param: String,
    /// Values of the swept parameter (repeat or comma-separate).
    #[arg(long = "values", value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Coincidence window widths in ps.
    #[arg(short, long = "window", value_delimiter = ',', required = true)]
    pub windows: Vec<u64>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub offset_ps: i64,
    /// Add the model's expected p1 and p2+ next to each measured row.
    #[arg(long)]
    pub oracle: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    param: String,
    value: f64,
    seed: u64,
    #[serde(flatten)]
    row: AnalysisRow,
    oracle_p1: Option<f64>,
    oracle_p2plus: Option<f64>,
}

impl CsvRecord for SweepRow {
    const HEADER: &'static str =
        "param,value,seed,window_ns,window_ps,offset_ps,r0,r1a,r1b,r2,p0,sigma_p0,p1,sigma_p1,\
p2plus,sigma_p2plus,p2_boundary,delta_w,delta_w_p1_inclusive,side,low_count,p1_clamped,oracle_p1,oracle_p2plus";

    fn csv_fields(&self) -> Vec<String> {
        let mut fields = vec![self.param.clone(), num(self.value), self.seed.to_string()];
        fields.extend(self.row.csv_fields());
        fields.push(opt_num(self.oracle_p1));
        fields.push(opt_num(self.oracle_p2plus));
        fields
    }
}

fn sweep_point(
    base: &SourceConfig,
    param: &str,
    value: f64,
    windows: &[WindowSpec],
    oracle: bool,
) -> Result<Vec<SweepRow>, CliError> {
    let cfg = base.with_param(param, value)?;
    let t = SplittingRatio::new(cfg.splitter_t())?;
    let stream = cfg.simulate()?;
    if stream.is_empty() {
        return Err(CliError::Data(format!("{param} = {value} produced no time tags")));
    }
    let rows = analyze_windows(&stream, windows, t, Trigger::Channel)?;
    rows.into_iter()
        .zip(windows)
        .map(|(row, &window)| {
            let expected = if oracle {
                match oracle_stats(&cfg, window) {
                    Ok(o) => Some(o),
                    Err(SimError::Unsupported(_)) => None,
                    Err(e) => return Err(e.into()),
                }
            } else {
                None
            };
            Ok(SweepRow {
                param: param.to_string(),
                value,
                seed: cfg.seed(),
                row,
                oracle_p1: expected.map(|o| o.p1),
                oracle_p2plus: expected.map(|o| o.p2plus),
            })
        })
        .collect()
}

pub fn run_sweep(args: &SweepArgs, format: OutputFormat, seed: Option<u64>) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Usage("the sweep needs at least one value".into()));
    }
    let base = args.model.resolve(seed)?;
    let windows = windows(&args.windows, args.offset_ps)?;
    let config = json!({
        "source": config_value(&base),
        "param": args.param,
        "values": args.values,
        "windows_ps": args.windows,
        "offset_ps": args.offset_ps,
        "oracle": args.oracle,
    });
    let mut run = Run::start("sweep", config).seed(Some(base.seed()));
    if let Some(path) = &args.model.config {
        run = run.input(path);
    }
    // validate the parameter name before spending time on simulations
    base.with_param(&args.param, args.values[0])?;
    let points: Vec<Vec<SweepRow>> = args
        .values
        .par_iter()
        .map(|&v| sweep_point(&base, &args.param, v, &windows, args.oracle))
        .collect::<Result<_, _>>()?;
    let rows: Vec<SweepRow> = points.into_iter().flatten().collect();
    run.emit(args.out.as_deref(), SWEEP_SCHEMA, &render(&rows, format)?)
}
