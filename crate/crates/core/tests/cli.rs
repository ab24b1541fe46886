use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybrid_ssd::harness::{load_report, parse_run_config, SWEEP_MULTIPLIERS};
use hybrid_ssd::ConfigProfile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-ssd"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn small_synth(dir: &Path) -> PathBuf {
    write(
        dir,
        "small.synth",
        "# short skewed run\nops 3000\nhot_fraction 0.9\nhot_region_fraction 0.05\nwrite_ratio 0.7\nseed 4\nspan_bytes 67108864\nrequest_bytes 16384\ninterarrival_us 100\n",
    )
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn defaults_round_trip_through_the_run_file_parser() {
    let out = run(&["defaults"]);
    assert!(out.status.success());
    let rc = parse_run_config(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rc.options.config, ConfigProfile::default());
}

#[test]
fn default_mode_writes_a_loadable_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let report = dir.path().join("out.json");
    let out = run(&["run", "--trace", s(&trace), "--format", "synth", "--report", s(&report)]);
    assert!(out.status.success());
    let r = load_report(&report).unwrap();
    assert!(!r.partial);
    assert_eq!(r.requests, 3000);
    assert_eq!(r.reads + r.writes, 3000);
    assert_eq!(r.normalized_execution_time, Some(1.0));
    assert!(r.tuning.is_empty());
}

#[test]
fn csv_report_has_header_and_period_rows() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let cfg = write(dir.path(), "run.cfg", "tuning_interval = 500\ninvestigation_period = 500\n");
    let json = dir.path().join("out.json");
    let csv = dir.path().join("out.csv");
    for report in [&json, &csv] {
        let out = run(&["run", "--trace", s(&trace), "--format", "synth", "--config", s(&cfg), "--report", s(report)]);
        assert!(out.status.success());
    }
    let r = load_report(&json).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("period,request_count,mean_latency_us"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len() as u64, r.writes / 500);
    let counts: Vec<u64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let expected: Vec<u64> = r.periods.iter().map(|p| p.request_count).collect();
    assert_eq!(counts, expected);
    assert!(counts.iter().sum::<u64>() <= r.requests);
}

#[test]
fn tuned_mode_with_scripted_backend_records_history() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let script = write(dir.path(), "resp.txt", "New configuration: `1.GC trigger threshold: 9; 2.Windows size: 1500`\n");
    let cfg = write(dir.path(), "run.cfg", "tuning_interval = 1000\ninvestigation_period = 1000\nmax_iterations = 1\n");
    let report = dir.path().join("tuned.json");
    let history = dir.path().join("history.jsonl");
    let out = run(&[
        "run", "--trace", s(&trace), "--format", "synth", "--mode", "tuned", "--config", s(&cfg),
        "--backend", &format!("scripted:{}", s(&script)), "--report", s(&report), "--history", s(&history),
    ]);
    assert!(out.status.success());
    let r = load_report(&report).unwrap();
    assert_eq!(r.tuning.len(), 1);
    let h = std::fs::read_to_string(&history).unwrap();
    assert_eq!(h.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(h.lines().next().unwrap()).unwrap();
    assert_eq!(rec["proposed"]["window_size"], 1500);
}

#[test]
fn sweep_mode_emits_one_row_per_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let report = dir.path().join("sweep.csv");
    let out = run(&[
        "run", "--trace", s(&trace), "--format", "synth", "--mode", "sweep", "--sweep-param", "slice_size",
        "--report", s(&report),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), SWEEP_MULTIPLIERS.len() + 1);
    assert!(text.lines().skip(1).all(|l| l.starts_with("slice_size,")));
}

#[test]
fn msr_trace_counts_skipped_lines() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write(
        dir.path(),
        "t.csv",
        "128166372003061629,hm,0,Write,4096,16384,100\n\
         128166372003061729,hm,0,Read,4096,4096,80\n\
         not,a,valid,line\n\
         128166372003062629,hm,0,Write,65536,8192,90\n",
    );
    let report = dir.path().join("msr.json");
    assert!(run(&["run", "--trace", s(&trace), "--format", "msr", "--report", s(&report)]).status.success());
    let r = load_report(&report).unwrap();
    assert_eq!((r.requests, r.writes, r.reads, r.skipped_lines), (3, 2, 1, 1));
}

#[test]
fn unwritable_report_path_fails_without_leaving_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let report = dir.path().join("missing").join("out.json");
    let out = run(&["run", "--trace", s(&trace), "--format", "synth", "--report", s(&report)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!report.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_synth(dir.path());
    let report = dir.path().join("r.json");
    let tuned = run(&["run", "--trace", s(&trace), "--format", "synth", "--mode", "tuned", "--report", s(&report)]);
    assert!(!tuned.status.success());
    assert!(String::from_utf8_lossy(&tuned.stderr).contains("--backend"));

    let cfg = write(dir.path(), "bad.cfg", "prefill = 0.2\nturbo = on\n");
    let bad = run(&["run", "--trace", s(&trace), "--format", "synth", "--config", s(&cfg), "--report", s(&report)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));

    let prefill = run(&["run", "--trace", s(&trace), "--format", "synth", "--prefill", "1.5", "--report", s(&report)]);
    assert!(!prefill.status.success());
    assert!(!report.exists());
}
