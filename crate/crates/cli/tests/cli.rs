use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsps_core::ngwitness::boundary_p2_at_p1;
use serde_json::Value;

const ANALYZE_HEADER: &str = "window_ns,window_ps,offset_ps,r0,r1a,r1b,r2,p0,sigma_p0,p1,sigma_p1,p2plus,\
sigma_p2plus,p2_boundary,delta_w,delta_w_p1_inclusive,side,low_count,p1_clamped";
const SWEEP_HEADER: &str = "param,value,seed,window_ns,window_ps,offset_ps,r0,r1a,r1b,r2,p0,sigma_p0,p1,sigma_p1,\
p2plus,sigma_p2plus,p2_boundary,delta_w,delta_w_p1_inclusive,side,low_count,p1_clamped,oracle_p1,oracle_p2plus";
const G2_HEADER: &str =
    "x_channel,y_channel,bin_ps,range_ps,pairs,period_ps,integration_ps,ratio,sigma,center_area,far_mean_area,far_peaks";

fn hsps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsps")).args(args).output().expect("run hsps")
}

fn ok(args: &[&str]) -> String {
    let out = hsps(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hsps(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parses a CSV table into its header and rows of named fields.
fn table(csv: &str) -> (String, Vec<std::collections::HashMap<String, String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().to_string();
    let names: Vec<&str> = header.split(',').collect();
    let rows =
        lines.map(|l| names.iter().map(|n| n.to_string()).zip(l.split(',').map(str::to_string)).collect()).collect();
    (header, rows)
}

fn field(row: &std::collections::HashMap<String, String>, name: &str) -> f64 {
    row[name].parse().unwrap_or_else(|_| panic!("{name} = {:?}", row[name]))
}

fn simulate(dir: &Path, name: &str, model: &str, sets: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["simulate", "--model", model, "-o", s(&out)];
    for set in sets {
        args.extend(["--set", set]);
    }
    ok(&args);
    out
}

#[test]
fn simulate_writes_stream_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let sets = ["duration_ps=1e9", "mu=0.05"];
    let a = simulate(dir.path(), "a.ptag", "spdc", &sets);
    let b = simulate(dir.path(), "b.ptag", "spdc", &sets);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.ptag.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["schema"], "hsps.simulate/1");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["model"], "spdc");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    for key in ["version", "started_unix_ms", "finished_unix_ms", "inputs"] {
        assert!(!manifest[key].is_null(), "{key}");
    }

    let c = dir.path().join("c.ptag");
    ok(&["--seed", "9", "simulate", "--model", "spdc", "--set", "duration_ps=1e9", "--set", "mu=0.05", "-o", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let summary = ok(&["--seed", "9", "simulate", "--model", "spdc", "--print-config"]);
    assert_eq!(serde_json::from_str::<Value>(&summary).unwrap()["seed"], 9);
}

#[test]
fn config_file_and_model_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": "qd_cw", "duration_ps": 1000000000, "pump_rate_hz": 1e9}"#).unwrap();
    let out = dir.path().join("cw.csv");
    let summary = ok(&["simulate", "--config", s(&cfg), "-o", s(&out)]);
    let (header, rows) = table(&summary);
    assert_eq!(header, "model,seed,duration_ps,tags,trigger_tags,a_tags,b_tags");
    assert_eq!(rows[0]["model"], "qd_cw");
    assert!(dir.path().join("cw.csv.meta.json").exists());
    assert_eq!(code(&["simulate", "--model", "spdc", "--config", s(&cfg), "-o", s(&out)]), 2);
    std::fs::write(&cfg, r#"{"model": "qd_cw", "bogus": 1}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", s(&cfg), "-o", s(&out)]), 2);
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(code(&["simulate", "--config", s(&cfg), "-o", s(&out)]), 3);
}

#[test]
fn analyze_schema_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stream = simulate(dir.path(), "p.ptag", "qd_pulsed", &["duration_ps=2e9", "eta_x=0.2", "eta_xx=0.2"]);
    let csv = ok(&["analyze", s(&stream), "-w", "10000,10240", "-w", "750", "-t", "0.54"]);
    let (header, rows) = table(&csv);
    assert_eq!(header, ANALYZE_HEADER);
    let ns: Vec<&str> = rows.iter().map(|r| r["window_ns"].as_str()).collect();
    assert_eq!(ns, ["10.00", "10.24", "0.75"]);
    for r in &rows {
        let total = field(r, "p0") + field(r, "p1") + field(r, "p2plus");
        assert!((total - 1.0).abs() < 1e-12);
    }

    let json = ok(&["--format", "json", "analyze", s(&stream), "-w", "10000,10240,750", "-t", "0.54"]);
    let json: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
    assert_eq!(json[1]["window_ns"], "10.24");
    assert_eq!(json[1]["r0"].as_u64().unwrap().to_string(), rows[1]["r0"]);

    let out = dir.path().join("table.csv");
    ok(&["analyze", s(&stream), "-w", "10000,10240,750", "-t", "0.54", "-o", s(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), csv);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("table.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "hsps.analyze/1");
    assert_eq!(manifest["inputs"][0], s(&stream));

    let periodic = ok(&["analyze", s(&stream), "-w", "5000", "-t", "0.54", "--periodic-ps", "11905"]);
    let (_, prow) = table(&periodic);
    assert!(field(&prow[0], "r0") > field(&rows[0], "r0"));
}

#[test]
fn analyze_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "channel,time_ps\n").unwrap();
    let out = dir.path().join("out.csv");
    assert_eq!(code(&["analyze", s(&empty), "--duration-ps", "1000", "-w", "100", "-t", "0.5", "-o", s(&out)]), 3);
    assert!(!out.exists());
    assert!(!dir.path().join("out.csv.manifest.json").exists());

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "channel,time_ps\n0,x\n").unwrap();
    assert_eq!(code(&["analyze", s(&bad), "--duration-ps", "1000", "-w", "100", "-t", "0.5"]), 3);
    assert_eq!(code(&["analyze", s(&dir.path().join("missing.ptag")), "-w", "100", "-t", "0.5"]), 3);

    let good = dir.path().join("good.csv");
    std::fs::write(&good, "channel,time_ps\n0,5\n1,9\n").unwrap();
    assert_eq!(code(&["analyze", s(&good), "-w", "100", "-t", "0.5"]), 3);
    assert_eq!(code(&["analyze", s(&good), "--duration-ps", "1000", "-w", "100", "-t", "1.5"]), 2);
    assert_eq!(code(&["analyze", s(&good), "--duration-ps", "1000", "-w", "0", "-t", "0.5"]), 2);
    assert_eq!(code(&["analyze", s(&good), "--duration-ps", "1000", "-t", "0.5"]), 2);
    assert_eq!(code(&["--channels", "trigger=0,q=1", "analyze", s(&good), "-w", "9", "-t", "0.5"]), 2);
    assert_eq!(code(&["analyze", s(&good), "--duration-ps", "1000", "-w", "100", "-t", "0.5"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn resonant_dot_witness_falls_with_window() {
    let dir = tempfile::tempdir().unwrap();
    let stream =
        simulate(dir.path(), "rqd.ptag", "qd_pulsed", &["duration_ps=1.2e10", "eta_x=0.3", "eta_xx=0.3", "seed=1"]);
    let csv = ok(&["analyze", s(&stream), "-w", "10000,10240,10750,11240", "-t", "0.54"]);
    let (_, rows) = table(&csv);
    let dw: Vec<f64> = rows.iter().map(|r| field(r, "delta_w")).collect();
    assert!(dw[0] > 0.0, "{dw:?}");
    assert!(dw.windows(2).all(|p| p[1] < p[0]), "{dw:?}");
}

#[test]
fn cw_dot_witness_negative_and_growing() {
    let dir = tempfile::tempdir().unwrap();
    let stream = simulate(dir.path(), "cw.ptag", "qd_cw", &["duration_ps=1.2e10", "eta_x=0.1", "eta_xx=0.1"]);
    let csv = ok(&["analyze", s(&stream), "-w", "1540,2050,2560,3070,3840", "-t", "0.64"]);
    let (_, rows) = table(&csv);
    let dw: Vec<f64> = rows.iter().map(|r| field(r, "delta_w")).collect();
    assert!(dw.iter().all(|&x| x < 0.0), "{dw:?}");
    assert!(dw.windows(2).all(|p| p[1] < p[0]), "{dw:?}");
    assert!(rows.iter().all(|r| r["side"] == "gaussian_compatible"));
}

#[test]
fn boundary_export() {
    let csv = ok(&["boundary"]);
    let (header, rows) = table(&csv);
    assert_eq!(header, "p1,p2_boundary");
    assert_eq!(rows.len(), 200);
    let first = field(&rows[0], "p1");
    let last = field(rows.last().unwrap(), "p1");
    assert!((first - 1e-4).abs() < 1e-15 && (last - 0.2).abs() < 1e-12);
    for r in [&rows[0], &rows[99], rows.last().unwrap()] {
        let (p2, _) = boundary_p2_at_p1(field(r, "p1")).unwrap();
        assert!((field(r, "p2_boundary") - p2).abs() <= 1e-12 * p2);
    }
    let (_, few) = table(&ok(&["boundary", "--p1-lo", "0.01", "--p1-hi", "0.02", "-n", "2"]));
    assert_eq!(few.len(), 2);
    assert_eq!(code(&["boundary", "-n", "1"]), 2);
    assert_eq!(code(&["boundary", "--p1-hi", "0.6"]), 2);
}

#[test]
fn g2_histogram_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let stream =
        simulate(dir.path(), "g.ptag", "qd_pulsed", &["duration_ps=4e9", "eta_x=0.3", "eta_xx=0.3", "dark_hz=0"]);
    let hist = dir.path().join("hist.csv");
    let summary = ok(&[
        "g2",
        s(&stream),
        "--bin-ps",
        "500",
        "--range-ps",
        "100000",
        "--period-ps",
        "11905",
        "--histogram",
        s(&hist),
    ]);
    let (header, rows) = table(&summary);
    assert_eq!(header, G2_HEADER);
    assert!(field(&rows[0], "ratio") < 0.05);
    assert!(field(&rows[0], "far_peaks") >= 10.0);
    let (hheader, hrows) = table(&std::fs::read_to_string(&hist).unwrap());
    assert_eq!(hheader, "bin_start_ps,count");
    assert_eq!(hrows.len(), 400);
    let total: f64 = hrows.iter().map(|r| field(r, "count")).sum();
    assert_eq!(total, field(&rows[0], "pairs"));
    assert!(dir.path().join("hist.csv.manifest.json").exists());
    assert_eq!(code(&["g2", s(&stream), "--bin-ps", "300", "--range-ps", "1000"]), 2);
    assert_eq!(code(&["g2", s(&stream), "--bin-ps", "500", "--range-ps", "1000", "--period-ps", "11905"]), 3);
}

#[test]
fn sweep_pump_and_attenuation() {
    let csv = ok(&[
        "sweep",
        "--model",
        "qd_cw",
        "--set",
        "duration_ps=2e9",
        "--set",
        "eta_x=0.1",
        "--set",
        "eta_xx=0.1",
        "--param",
        "pump_rate_hz",
        "--values",
        "1e9,2e9,4e9,8e9",
        "-w",
        "1500",
        "--oracle",
    ]);
    let (header, rows) = table(&csv);
    assert_eq!(header, SWEEP_HEADER);
    assert_eq!(rows.len(), 4);
    let oracle: Vec<f64> = rows.iter().map(|r| field(r, "oracle_p1")).collect();
    assert!(oracle.windows(2).all(|p| p[1] < p[0]), "{oracle:?}");
    let measured: Vec<f64> = rows.iter().map(|r| field(r, "p1")).collect();
    assert!(measured[3] < measured[0], "{measured:?}");

    let csv = ok(&[
        "sweep",
        "--model",
        "spdc",
        "--set",
        "duration_ps=4e9",
        "--set",
        "mu=0.05",
        "--param",
        "attenuation",
        "--values",
        "1,0.3",
        "-w",
        "500,1000",
    ]);
    let (_, rows) = table(&csv);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["oracle_p1"], "");
    assert!(field(&rows[2], "p1") < field(&rows[0], "p1"));

    assert_eq!(code(&["sweep", "--model", "spdc", "--param", "mu", "--values", "", "-w", "500"]), 2);
    assert_eq!(code(&["sweep", "--model", "spdc", "--param", "mu", "-w", "500"]), 2);
    assert_eq!(code(&["sweep", "--model", "spdc", "--param", "nope", "--values", "1", "-w", "500"]), 2);
}

#[test]
fn analysis_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let stream = simulate(dir.path(), "d.ptag", "spdc", &["duration_ps=2e9", "mu=0.05"]);
    let args = ["analyze", s(&stream), "-w", "300,500,700,900,1100", "-t", "0.5"];
    assert_eq!(ok(&args), ok(&args));
}
