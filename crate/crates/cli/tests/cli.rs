use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sentiscale(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentiscale"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SPEC: &str = r#"
duration_s = 900
base_rate = 5
rng_seed = 3
bursts = [{ event_time_s = 300, peak_rate = 30, rise_s = 60, decay_s = 120 }]
"#;

const RUN: &str = r#"
seed = 4
policy = "load"
[sim]
starting_cpus = 2
[workload]
trace = "trace.csv"
resample_cycles = true
[output]
histogram_bin_s = 10
"#;

fn with_trace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "gen.toml", SPEC);
    let out = sentiscale(
        tmp.path(),
        &["-q", "--out", "trace.csv", "generate", "gen.toml"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    tmp
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let tmp = with_trace();
    let first = fs::read(tmp.path().join("trace.csv")).unwrap();
    sentiscale(
        tmp.path(),
        &["-q", "--out", "again", "generate", "gen.toml"],
    );
    assert_eq!(first, fs::read(tmp.path().join("again/trace.csv")).unwrap());
    let w = sentiscale::workload::load_trace(&tmp.path().join("trace.csv"), None).unwrap();
    assert!(w.items.len() > 4000);
    assert_eq!(w.classes.len(), 3);

    sentiscale(
        tmp.path(),
        &[
            "-q",
            "--seed",
            "99",
            "--out",
            "other.csv",
            "generate",
            "gen.toml",
        ],
    );
    assert_ne!(first, fs::read(tmp.path().join("other.csv")).unwrap());
}

#[test]
fn negative_rate_is_a_usage_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.toml", "base_rate = -1\n");
    let out = sentiscale(tmp.path(), &["generate", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("base_rate"));
}

#[test]
fn unknown_flags_and_policies_exit_2() {
    let tmp = with_trace();
    assert_eq!(
        sentiscale(tmp.path(), &["--bogus", "run", "x"])
            .status
            .code(),
        Some(2)
    );
    write(
        tmp.path(),
        "run.toml",
        &RUN.replace("\"load\"", "\"magic\""),
    );
    let out = sentiscale(tmp.path(), &["run", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    assert_eq!(
        sentiscale(tmp.path(), &["run", "missing.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn run_writes_all_outputs_and_is_reproducible() {
    let tmp = with_trace();
    write(tmp.path(), "run.toml", RUN);
    let files = [
        "summary.csv",
        "events.log",
        "timeline.csv",
        "completions.csv",
        "latency_histogram.csv",
    ];
    let mut outputs = Vec::new();
    for dir in ["a", "b"] {
        let out = sentiscale(tmp.path(), &["-q", "--out", dir, "run", "run.toml"]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(files.map(|f| fs::read(tmp.path().join(dir).join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let summary = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert!(summary.starts_with("run_id,policy,params,violation_pct,cpu_hours,L,lambda,W\n"));
    assert!(summary.contains("load-seed4,load,q=0.99999"));
    let events = String::from_utf8(outputs[0][1].clone()).unwrap();
    assert!(events.starts_with("clock_s,event,item_id,detail\n"));
    assert!(events.contains(",scale_out_request,"));

    let out = sentiscale(
        tmp.path(),
        &["-q", "--seed", "5", "--out", "c", "run", "run.toml"],
    );
    assert!(out.status.success());
    assert_ne!(
        fs::read(tmp.path().join("c/summary.csv")).unwrap(),
        outputs[0][0]
    );
}

#[test]
fn stationary_load_with_spare_capacity_has_no_violations() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"
policy = "fixed"
[sim]
starting_cpus = 8
[workload.synthetic]
duration_s = 1200
base_rate = 5
"#;
    let path = write(tmp.path(), "run.toml", cfg);
    let g = sentiscale_cli::Globals {
        out: Some(tmp.path().join("out")),
        quiet: true,
        ..Default::default()
    };
    let r = sentiscale_cli::cmd_run(&path, &g).unwrap();
    assert_eq!(r.metrics.sla_violation_fraction, 0.0);
    assert!(r.metrics.completed > 5000);
}

#[test]
fn experiment_matrix_yields_one_row_per_combo() {
    let tmp = with_trace();
    let spec = r#"
seed = 2
[workload]
trace = "trace.csv"
[matrix.threshold]
upper = [0.6, 0.9]
[matrix.load]
quantile = [0.9, 0.999]
[replication]
min_reps = 2
max_reps = 3
"#;
    write(tmp.path(), "exp.toml", spec);
    let out = sentiscale(
        tmp.path(),
        &["-q", "--out", "exp", "experiment", "exp.toml"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let results = fs::read_to_string(tmp.path().join("exp/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines.len(), 5, "{results}");
    assert!(lines[0].starts_with("policy,params,replications,stop_reason"));
    let reps = fs::read_to_string(tmp.path().join("exp/replications.csv")).unwrap();
    assert!(reps.lines().count() > 4 * 2);
}

#[test]
fn analyze_handles_traces_run_dirs_and_missing_input() {
    let tmp = with_trace();
    let out = sentiscale(tmp.path(), &["-q", "--out", "an", "analyze", "trace.csv"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let corr = fs::read_to_string(tmp.path().join("an/correlation.csv")).unwrap();
    assert!(corr.starts_with("lag,r\n"));
    assert_eq!(corr.lines().count(), 12);

    write(tmp.path(), "run.toml", RUN);
    sentiscale(tmp.path(), &["-q", "--out", "r", "run", "run.toml"]);
    let out = sentiscale(tmp.path(), &["-q", "--out", "an2", "analyze", "r"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    assert_eq!(
        sentiscale(tmp.path(), &["analyze", "nope.csv"])
            .status
            .code(),
        Some(2)
    );
}
