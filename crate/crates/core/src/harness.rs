//! Trace replay in default, tuned and sweep modes, run reports, and the flat
//! run-configuration file.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_value, ConfigProfile, Param, ParamValue, RawValue};
use crate::ftl::PlacementPolicy;
use crate::rl::QEntry;
use crate::sim::{SimError, SimSetup, Simulator};
use crate::ssd::FlashGeometry;
use crate::trace::{IoKind, TraceRecord};
use crate::tuner::parse::correct_mistakes;
use crate::tuner::{accuracy, AutoTuner, EpochTrigger, TuningRecord, Verdict};
use crate::units::Micros;
use crate::verify::{measure, run_epoch, EpochSchedule, PerfSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub setup: SimSetup,
    pub config: ConfigProfile,
    pub schedule: EpochSchedule,
    /// Fraction of logical space written before measurement starts.
    pub prefill: f64,
    /// Execution time of a default-config run, for normalization.
    pub baseline_time: Option<u64>,
}

impl ReplayOptions {
    pub fn new(setup: SimSetup, config: ConfigProfile) -> Self {
        ReplayOptions {
            setup,
            config,
            schedule: EpochSchedule::default(),
            prefill: 0.0,
            baseline_time: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounters {
    pub gc_count: u64,
    pub mc_count: u64,
    pub emergency_gc_count: u64,
    pub unmapped_reads: u64,
    pub rejected_requests: u64,
    pub capacity_warnings: u64,
    pub agent_actions: u64,
    pub classifications: u64,
    pub rl_updates: u64,
    pub erases: u64,
}

/// Condensed view of one tuning epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub trigger: EpochTrigger,
    pub verdict: Verdict,
    pub improved: bool,
    pub changed: Vec<Param>,
    pub corrections: usize,
    pub mean_latency_before: Option<f64>,
    pub mean_latency_after: Option<f64>,
    pub wa_before: Option<f64>,
    pub wa_after: Option<f64>,
    pub error: Option<String>,
}

impl From<&TuningRecord> for EpochSummary {
    fn from(r: &TuningRecord) -> Self {
        EpochSummary {
            epoch: r.epoch,
            trigger: r.trigger,
            verdict: r.verdict,
            improved: r.improved,
            changed: r.proposed.as_ref().map(|p| r.config_before.diff(p)).unwrap_or_default(),
            corrections: r.corrections.len(),
            mean_latency_before: r.perf_before.map(|p| p.mean_latency),
            mean_latency_after: r.perf_after.map(|p| p.mean_latency),
            wa_before: r.perf_before.map(|p| p.wa),
            wa_after: r.perf_after.map(|p| p.wa),
            error: r.error.clone(),
        }
    }
}

/// Profile that became active at a given request index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigChange {
    pub request: u64,
    pub epoch: Option<u64>,
    pub profile: ConfigProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Set when the run stopped early; the rest of the report covers the
    /// requests served until then.
    pub partial: bool,
    pub abort_reason: Option<String>,
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub skipped_lines: u64,
    /// Sum of request service times, microseconds.
    pub total_execution_time: u64,
    pub normalized_execution_time: Option<f64>,
    pub host_pages_written: u64,
    pub device_pages_written: u64,
    pub final_wa: Option<f64>,
    pub counters: ReportCounters,
    /// One snapshot per tuning interval.
    pub periods: Vec<PerfSnapshot>,
    pub tuning: Vec<EpochSummary>,
    pub accuracy: Option<f64>,
    pub config_evolution: Vec<ConfigChange>,
    pub final_config: ConfigProfile,
    /// Visited Q-table entries.
    pub qtable: Vec<QEntry>,
}

impl RunReport {
    pub fn mean_latency(&self) -> Option<f64> {
        (self.requests > 0).then(|| self.total_execution_time as f64 / self.requests as f64)
    }
}

/// Report plus the full tuning history.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    pub history: Vec<TuningRecord>,
}

/// Counter values when measurement starts, so prefill work is excluded.
struct Start {
    marker: crate::sim::Marker,
    counters: crate::ftl::FtlCounters,
    classifications: u64,
    rl_updates: u64,
    erases: u64,
}

impl Start {
    fn now(sim: &Simulator) -> Start {
        Start {
            marker: sim.marker(),
            counters: *sim.ftl().counters(),
            classifications: sim.classifications(),
            rl_updates: sim.agent().updates(),
            erases: sim.ftl().ssd().erase_operations(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    sim: &Simulator,
    start: &Start,
    reads: u64,
    writes: u64,
    periods: Vec<PerfSnapshot>,
    history: &[TuningRecord],
    evolution: Vec<ConfigChange>,
    opts: &ReplayOptions,
    abort: Option<String>,
) -> RunReport {
    let end = sim.marker();
    let host = end.host_pages - start.marker.host_pages;
    let device = end.device_pages - start.marker.device_pages;
    let total = end.latency - start.marker.latency;
    let c = sim.ftl().counters();
    let c0 = &start.counters;
    RunReport {
        partial: abort.is_some(),
        abort_reason: abort,
        requests: end.requests - start.marker.requests,
        reads,
        writes,
        skipped_lines: 0,
        total_execution_time: total,
        normalized_execution_time: opts.baseline_time.filter(|&b| b > 0).map(|b| total as f64 / b as f64),
        host_pages_written: host,
        device_pages_written: device,
        final_wa: (host > 0).then(|| device as f64 / host as f64),
        counters: ReportCounters {
            gc_count: c.gc_count - c0.gc_count,
            mc_count: c.mc_count - c0.mc_count,
            emergency_gc_count: c.emergency_gc_count - c0.emergency_gc_count,
            unmapped_reads: c.unmapped_reads - c0.unmapped_reads,
            rejected_requests: c.rejected_requests - c0.rejected_requests,
            capacity_warnings: c.capacity_warnings - c0.capacity_warnings,
            agent_actions: c.agent_actions - c0.agent_actions,
            classifications: sim.classifications() - start.classifications,
            rl_updates: sim.agent().updates() - start.rl_updates,
            erases: sim.ftl().ssd().erase_operations() - start.erases,
        },
        periods,
        tuning: history.iter().map(EpochSummary::from).collect(),
        accuracy: accuracy(history),
        config_evolution: evolution,
        final_config: sim.config().clone(),
        qtable: sim.agent().table().snapshot(),
    }
}

/// Replays `trace` on an existing simulator. Prefill happens first and is
/// excluded from every metric. With no tuner, or `max_iterations` 0, the
/// configuration never changes.
pub fn replay_on(
    sim: &mut Simulator,
    trace: &[TraceRecord],
    opts: &ReplayOptions,
    mut tuner: Option<&mut AutoTuner>,
) -> RunOutcome {
    if opts.prefill > 0.0 {
        if let Err(e) = sim.prefill(opts.prefill) {
            let start = Start::now(sim);
            let report = finish(sim, &start, 0, 0, Vec::new(), &[], Vec::new(), opts, Some(format!("prefill: {e}")));
            return RunOutcome { report, history: Vec::new() };
        }
    }
    let start = Start::now(sim);
    let schedule = &opts.schedule;
    let mut history: Vec<TuningRecord> = Vec::new();
    let mut periods = Vec::new();
    let mut evolution = vec![ConfigChange { request: 0, epoch: None, profile: sim.config().clone() }];
    let (mut reads, mut writes) = (0u64, 0u64);
    let mut period_mark = start.marker;
    let mut writes_in_period = 0u64;
    let mut shift_pending = false;
    let mut shift_allowed = true;
    let mut abort = None;
    let mut records = trace.iter();
    let count = |kind: IoKind, reads: &mut u64, writes: &mut u64| match kind {
        IoKind::Read => *reads += 1,
        IoKind::Write => *writes += 1,
    };

    let result: Result<(), SimError> = (|| {
        while let Some(rec) = records.next() {
            let step = sim.step(rec)?;
            count(step.kind, &mut reads, &mut writes);
            writes_in_period += (step.kind == IoKind::Write) as u64;
            shift_pending |= step.shift;
            let tuning_live = tuner.is_some() && (history.len() as u32) < schedule.max_iterations;
            let scheduled = writes_in_period >= schedule.tuning_interval;
            let shifted = tuning_live && schedule.shift_epochs && shift_pending && shift_allowed && !scheduled;
            if !scheduled && !shifted {
                continue;
            }
            let perf = measure(sim, &period_mark).ok();
            if let Some(p) = perf {
                periods.push(p);
            }
            period_mark = sim.marker();
            shift_pending = false;
            if scheduled {
                writes_in_period = 0;
                shift_allowed = true;
            } else {
                shift_allowed = false;
            }
            if !tuning_live {
                continue;
            }
            let Some(t) = tuner.as_deref_mut() else { continue };
            let trigger = if scheduled { EpochTrigger::Scheduled } else { EpochTrigger::Shift };
            let requests_before = sim.marker().requests - start.marker.requests;
            let outcome = run_epoch(sim, t, &mut records, schedule, &history, perf, trigger)?;
            let probe_reads = outcome.requests_replayed - outcome.writes_replayed;
            reads += probe_reads;
            writes += outcome.writes_replayed;
            writes_in_period += outcome.writes_replayed;
            if outcome.record.config_after != outcome.record.config_before {
                evolution.push(ConfigChange {
                    request: requests_before,
                    epoch: Some(outcome.record.epoch),
                    profile: outcome.record.config_after.clone(),
                });
            }
            history.push(outcome.record);
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::error!("replay aborted: {e}");
        abort = Some(e.to_string());
    }
    let report = finish(sim, &start, reads, writes, periods, &history, evolution, opts, abort);
    RunOutcome { report, history }
}

pub fn replay(trace: &[TraceRecord], opts: &ReplayOptions, tuner: Option<&mut AutoTuner>) -> Result<RunOutcome, SimError> {
    let mut sim = Simulator::new(opts.setup.clone(), opts.config.clone())?;
    Ok(replay_on(&mut sim, trace, opts, tuner))
}

/// A sweepable numeric knob: one of the profile parameters, or the K-means
/// convergence threshold which lives in the simulation setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Profile(Param),
    KmeansTol,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<SweepParam> {
        let squashed: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        if matches!(squashed.as_str(), "tol" | "kmeanstol" | "kmeansconvergencethreshold") {
            return Some(SweepParam::KmeansTol);
        }
        Param::from_name(name).map(SweepParam::Profile)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Profile(p) => p.key(),
            SweepParam::KmeansTol => "kmeans_tol",
        }
    }
}

/// Multipliers from a quarter to sixteen times the base value.
pub const SWEEP_MULTIPLIERS: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SweepError {
    #[error("{0} is not numeric")]
    NotNumeric(&'static str),
    #[error("sweep point {0}: {1}")]
    Point(String, String),
}

/// Options for one sweep point: the base scaled by `multiplier`, fitted to
/// bounds and rounded where the parameter is integral.
pub fn scaled_options(base: &ReplayOptions, param: SweepParam, multiplier: f64) -> Result<(ReplayOptions, f64), SweepError> {
    let mut opts = base.clone();
    match param {
        SweepParam::KmeansTol => {
            let tol = base.setup.kmeans_tol * multiplier;
            opts.setup.kmeans_tol = tol;
            Ok((opts, tol))
        }
        SweepParam::Profile(p) => {
            let v = base.config.get(p).as_f64().ok_or(SweepError::NotNumeric(p.key()))?;
            let raw = RawValue::Number { value: v * multiplier, dim: p.dim() };
            let bounds = crate::config::ParamBounds::for_page_size(base.setup.geometry.page_size);
            let fitted = correct_mistakes(&BTreeMap::from([(p, raw)]), &bounds, &base.config)
                .map_err(|e| SweepError::Point(format!("{}x", multiplier), e.to_string()))?;
            opts.config = fitted.profile;
            let value = opts.config.get(p).as_f64().unwrap_or(f64::NAN);
            Ok((opts, value))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

/// Default-mode replay per multiplier, one thread per point.
pub fn sweep(trace: &[TraceRecord], base: &ReplayOptions, param: SweepParam, multipliers: &[f64]) -> Result<SweepReport, SweepError> {
    let jobs: Vec<(f64, ReplayOptions, f64)> = multipliers
        .iter()
        .map(|&m| scaled_options(base, param, m).map(|(o, v)| (m, o, v)))
        .collect::<Result<_, _>>()?;
    let results: Vec<Result<SweepPoint, SweepError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(m, opts, v)| {
                s.spawn(move || {
                    replay(trace, opts, None)
                        .map(|o| SweepPoint { multiplier: *m, value: *v, report: o.report })
                        .map_err(|e| SweepError::Point(format!("{m}x"), e.to_string()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(SweepError::Point("?".into(), "worker panicked".into()))))
            .collect()
    });
    Ok(SweepReport { param: param.name().to_string(), points: results.into_iter().collect::<Result<_, _>>()? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Writes via a sibling temporary file and a rename, so a failure never
/// leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "report path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub const CSV_HEADER: [&str; 9] = [
    "period",
    "request_count",
    "mean_latency_us",
    "wa",
    "total_latency_us",
    "host_pages",
    "device_pages",
    "span_start_us",
    "span_end_us",
];

pub fn report_csv(report: &RunReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(CSV_HEADER);
    for (i, p) in report.periods.iter().enumerate() {
        let _ = w.write_record([
            i.to_string(),
            p.request_count.to_string(),
            format!("{:.3}", p.mean_latency),
            format!("{:.6}", p.wa),
            p.total_latency.to_string(),
            p.host_pages.to_string(),
            p.device_pages.to_string(),
            p.span_start.to_string(),
            p.span_end.to_string(),
        ]);
    }
    w.into_inner().unwrap_or_default()
}

pub fn sweep_csv(report: &SweepReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["param", "multiplier", "value", "execution_time_us", "wa", "gc_count", "mc_count"]);
    for p in &report.points {
        let _ = w.write_record([
            report.param.clone(),
            p.multiplier.to_string(),
            p.value.to_string(),
            p.report.total_execution_time.to_string(),
            p.report.final_wa.map(|v| format!("{v:.6}")).unwrap_or_default(),
            p.report.counters.gc_count.to_string(),
            p.report.counters.mc_count.to_string(),
        ]);
    }
    w.into_inner().unwrap_or_default()
}

pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> std::io::Result<()> {
    let bytes = match format {
        ReportFormat::Json => serde_json::to_vec_pretty(report).map_err(std::io::Error::other)?,
        ReportFormat::Csv => report_csv(report),
    };
    write_atomic(path, &bytes)
}

pub fn emit_sweep(report: &SweepReport, format: ReportFormat, path: &Path) -> std::io::Result<()> {
    let bytes = match format {
        ReportFormat::Json => serde_json::to_vec_pretty(report).map_err(std::io::Error::other)?,
        ReportFormat::Csv => sweep_csv(report),
    };
    write_atomic(path, &bytes)
}

/// Tuning history as JSON lines.
pub fn emit_history(history: &[TuningRecord], path: &Path) -> std::io::Result<()> {
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn load_report(path: &Path) -> std::io::Result<RunReport> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::other)
}

/// Settings for the remote backend that can come from the run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSettings {
    pub model: String,
    pub temperature: f64,
    pub auth_env: String,
    pub timeout_secs: u64,
    pub max_tokens: usize,
    pub overlap_tokens: usize,
    pub target_note: String,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            model: "gpt-4".into(),
            temperature: 0.0,
            auth_env: "LLM_API_KEY".into(),
            timeout_secs: 60,
            max_tokens: 4096,
            overlap_tokens: 256,
            target_note: String::new(),
        }
    }
}

/// Everything the flat `key = value` run file can set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub options: ReplayOptions,
    pub backend: BackendSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            options: ReplayOptions::new(SimSetup::desk(), ConfigProfile::default()),
            backend: BackendSettings::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ConfigFileError {
    pub line: usize,
    pub message: String,
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.replace('_', "").parse().map_err(|_| format!("not a number: {v}"))
}

fn parse_micros(v: &str) -> Result<Micros, String> {
    match parse_value(v) {
        RawValue::Number { value, dim } if value.is_finite() && value > 0.0 => match dim {
            crate::config::Dim::Time | crate::config::Dim::Plain => Ok(Micros(value.round() as u64)),
            _ => Err(format!("expected a duration: {v}")),
        },
        _ => Err(format!("expected a positive duration: {v}")),
    }
}

fn set_profile_value(profile: &mut ConfigProfile, page_size: u64, p: Param, v: &str) -> Result<(), String> {
    let raw = if p == Param::PlacementStrategy { RawValue::Text(v.to_string()) } else { parse_value(v) };
    let bounds = crate::config::ParamBounds::for_page_size(page_size);
    let fitted = correct_mistakes(&BTreeMap::from([(p, raw)]), &bounds, profile).map_err(|e| format!("{p}: {e}"))?;
    if let Some(c) = fitted.log.first() {
        return Err(format!("{p}: value {v} rejected ({:?})", c.kind));
    }
    *profile = fitted.profile;
    Ok(())
}

/// Parses the run file. Unknown keys, malformed values and out-of-range
/// parameters are errors; profile values are checked after the geometry so
/// slice sizes are validated against the final page size.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigFileError> {
    let mut rc = RunConfig::default();
    let mut deferred = Vec::new();
    let mut geometry_touched = false;
    let mut pages_per_block_slc = rc.options.setup.geometry.pages_per_block_slc;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ConfigFileError { line, message };
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
        let (k, v) = (k.trim(), v.trim());
        let o = &mut rc.options;
        let g = &mut o.setup.geometry;
        let lat = &mut o.setup.latency;
        let r: Result<(), String> = match k {
            "geometry" => match v {
                "desk" => {
                    o.setup.geometry = SimSetup::desk().geometry;
                    pages_per_block_slc = o.setup.geometry.pages_per_block_slc;
                    Ok(())
                }
                "full" => {
                    o.setup.geometry = FlashGeometry::full_scale();
                    pages_per_block_slc = o.setup.geometry.pages_per_block_slc;
                    Ok(())
                }
                _ => Err(format!("unknown geometry preset {v}")),
            },
            "channels" => parse_num(v).map(|x| g.channels = x),
            "blocks_per_channel" => parse_num(v).map(|x| g.blocks_per_channel = x),
            "pages_per_block_slc" => parse_num(v).map(|x| pages_per_block_slc = x),
            "page_size" => parse_num(v).map(|x| g.page_size = x),
            "op_ratio" => parse_num(v).map(|x| g.op_ratio = x),
            "initial_mode_split" => parse_num(v).map(|x| o.setup.initial_mode_split = x),
            "seed" => parse_num(v).map(|x| o.setup.seed = x),
            "kmeans_tol" => parse_num::<f64>(v).and_then(|x| {
                if x > 0.0 && x.is_finite() {
                    o.setup.kmeans_tol = x;
                    Ok(())
                } else {
                    Err("kmeans_tol must be positive".into())
                }
            }),
            "action_bound" => parse_num(v).map(|x| o.setup.action_bound = x),
            "read_slc" => parse_micros(v).map(|x| lat.read_slc = x),
            "read_qlc" => parse_micros(v).map(|x| lat.read_qlc = x),
            "write_slc" => parse_micros(v).map(|x| lat.write_slc = x),
            "write_qlc" => parse_micros(v).map(|x| lat.write_qlc = x),
            "erase_slc" => parse_micros(v).map(|x| lat.erase_slc = x),
            "erase_qlc" => parse_micros(v).map(|x| lat.erase_qlc = x),
            "tuning_interval" => parse_num(v).map(|x| o.schedule.tuning_interval = x),
            "investigation_period" => parse_num(v).map(|x| o.schedule.investigation_period = x),
            "degradation_threshold" => parse_num(v).map(|x| o.schedule.degradation_threshold = x),
            "max_iterations" => parse_num(v).map(|x| o.schedule.max_iterations = x),
            "shift_epochs" => parse_num(v).map(|x| o.schedule.shift_epochs = x),
            "prefill" => parse_num(v).map(|x| o.prefill = x),
            "model" => {
                rc.backend.model = v.to_string();
                Ok(())
            }
            "temperature" => parse_num(v).map(|x| rc.backend.temperature = x),
            "auth_env" => {
                rc.backend.auth_env = v.to_string();
                Ok(())
            }
            "timeout_secs" => parse_num(v).map(|x| rc.backend.timeout_secs = x),
            "max_tokens" => parse_num(v).map(|x| rc.backend.max_tokens = x),
            "overlap_tokens" => parse_num(v).map(|x| rc.backend.overlap_tokens = x),
            "target_note" => {
                rc.backend.target_note = v.to_string();
                Ok(())
            }
            _ => match Param::from_name(k) {
                Some(p) => {
                    deferred.push((line, p, v.to_string()));
                    Ok(())
                }
                None => Err(format!("unknown key {k}")),
            },
        };
        if matches!(k, "channels" | "blocks_per_channel" | "pages_per_block_slc" | "page_size" | "op_ratio") {
            geometry_touched = true;
        }
        r.map_err(err)?;
    }
    let o = &mut rc.options;
    if geometry_touched {
        let g = &o.setup.geometry;
        o.setup.geometry = FlashGeometry::new(g.channels, g.blocks_per_channel, pages_per_block_slc, g.page_size, g.op_ratio);
    }
    let whole = |message: String| ConfigFileError { line: 0, message };
    o.setup.geometry.validate().map_err(|e| whole(e.to_string()))?;
    o.setup.latency.validate().map_err(|e| whole(e.to_string()))?;
    o.schedule.validate().map_err(whole)?;
    if !(0.0..=1.0).contains(&o.setup.initial_mode_split) || !(0.0..=1.0).contains(&o.prefill) {
        return Err(whole("initial_mode_split and prefill must lie in [0, 1]".into()));
    }
    let page = o.setup.geometry.page_size;
    if o.config.slice_size % page != 0 {
        // The default slice size is only adjusted when the page size makes
        // it unaligned and the file does not set it.
        o.config.slice_size = (o.config.slice_size / page).max(1) * page;
    }
    for (line, p, v) in deferred {
        set_profile_value(&mut o.config, page, p, &v).map_err(|message| ConfigFileError { line, message })?;
    }
    Ok(rc)
}

/// Renders a profile in the run-file syntax.
pub fn profile_to_run_file(profile: &ConfigProfile) -> String {
    let mut s = String::new();
    for p in Param::ALL {
        let v = match profile.get(p) {
            ParamValue::Placement(PlacementPolicy::SlcFirst) => "slc_first".to_string(),
            ParamValue::Placement(PlacementPolicy::HotnessBased) => "hotness_based".to_string(),
            _ => profile.display_value(p),
        };
        s.push_str(&format!("{} = {}\n", p.key(), v));
    }
    s
}

/// Execution time of the same replay with tuning off.
pub fn baseline_time(trace: &[TraceRecord], opts: &ReplayOptions) -> Result<u64, SimError> {
    let mut base = opts.clone();
    base.baseline_time = None;
    Ok(replay(trace, &base, None)?.report.total_execution_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, SynthSpec};

    fn small_opts() -> ReplayOptions {
        let mut o = ReplayOptions::new(
            SimSetup::desk(),
            ConfigProfile { slice_size: 4 << 20, kmeans_trigger_threshold: 1000, ..ConfigProfile::default() },
        );
        o.schedule.tuning_interval = 2000;
        o.schedule.investigation_period = 1000;
        o
    }

    fn trace(ops: u64) -> Vec<TraceRecord> {
        synth_trace(&SynthSpec { ops, span_bytes: 100 << 20, seed: 3, ..SynthSpec::default() })
    }

    #[test]
    fn default_report_counts() {
        let out = replay(&trace(5000), &small_opts(), None).unwrap();
        let r = &out.report;
        assert!(!r.partial);
        assert_eq!(r.requests, 5000);
        assert_eq!(r.reads + r.writes, 5000);
        assert_eq!(r.periods.len() as u64, r.writes / 2000);
        assert!(r.tuning.is_empty());
        assert_eq!(r.accuracy, None);
    }

    #[test]
    fn csv_rows() {
        let out = replay(&trace(5000), &small_opts(), None).unwrap();
        let csv = String::from_utf8(report_csv(&out.report)).unwrap();
        assert_eq!(csv.lines().count(), out.report.periods.len() + 1);
    }

    #[test]
    fn run_file_parsing() {
        let text = "channels = 2\nblocks_per_channel = 16\npages_per_block_slc = 8\n\
                    GC trigger threshold = 12%\nslice_size = 1MB\nRL reward = 2ms\n\
                    placement_strategy = hotness_based\nwrite_qlc = 2.5ms\n";
        let rc = parse_run_config(text).unwrap();
        let o = &rc.options;
        assert_eq!(o.setup.geometry.pages_per_block_qlc, 32);
        assert_eq!(o.config.gc_trigger_threshold, 12.0);
        assert_eq!(o.config.slice_size, 1 << 20);
        assert_eq!(o.config.rl_reward_threshold, Micros(2000));
        assert_eq!(o.config.placement_strategy, PlacementPolicy::HotnessBased);
        assert_eq!(o.setup.latency.write_qlc, Micros(2500));
        assert!(parse_run_config("gc_trigger_threshold = 400").is_err());
        assert!(parse_run_config("frobnicate = 1").is_err());
        assert_eq!(parse_run_config("x").unwrap_err().line, 1);
    }

    #[test]
    fn run_file_roundtrip() {
        let p = ConfigProfile {
            placement_strategy: PlacementPolicy::HotnessBased,
            rl_learning_rate: 0.25,
            ..ConfigProfile::default()
        };
        let rc = parse_run_config(&profile_to_run_file(&p)).unwrap();
        assert_eq!(rc.options.config, p);
    }

    #[test]
    fn sweep_scaling() {
        let base = small_opts();
        let (o, v) = scaled_options(&base, SweepParam::Profile(Param::GcTriggerThreshold), 16.0).unwrap();
        assert_eq!(v, 96.0);
        assert_eq!(o.config.gc_trigger_threshold, 96.0);
        let (o, _) = scaled_options(&base, SweepParam::KmeansTol, 0.25).unwrap();
        assert_eq!(o.setup.kmeans_tol, 0.25e-4);
        assert!(scaled_options(&base, SweepParam::Profile(Param::PlacementStrategy), 2.0).is_err());
        assert_eq!(SweepParam::parse("tol"), Some(SweepParam::KmeansTol));
        assert_eq!(SweepParam::parse("slice_size"), Some(SweepParam::Profile(Param::SliceSize)));
    }
}
