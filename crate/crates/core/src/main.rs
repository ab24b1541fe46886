use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use hybrid_ssd::config::ParamBounds;
use hybrid_ssd::harness::{
    baseline_time, emit_history, BackendSettings, emit_report, emit_sweep, parse_run_config, profile_to_run_file, replay,
    ReportFormat, RunConfig, SweepParam, SWEEP_MULTIPLIERS,
};
use hybrid_ssd::trace::{load_trace, TraceFormat};
use hybrid_ssd::tuner::backend::{LlmBackend, RemoteBackend, RemoteConfig, ScriptedBackend};
use hybrid_ssd::tuner::AutoTuner;
use hybrid_ssd::ConfigProfile;

#[derive(Parser)]
#[command(name = "hybrid-ssd", version, about = "Hybrid SLC/QLC SSD simulator with LLM-driven tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Default,
    Tuned,
    Sweep,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and write a report.
    Run {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "msr")]
        format: TraceFormat,
        #[arg(long, value_enum, default_value = "default")]
        mode: Mode,
        /// Flat `key = value` run file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `scripted:<file>` or `remote:<url>`; required for tuned mode.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        report_format: Option<ReportFormat>,
        /// Fraction of the logical space written before measurement.
        #[arg(long)]
        prefill: Option<f64>,
        /// Parameter to sweep in sweep mode.
        #[arg(long, default_value = "gc_trigger_threshold")]
        sweep_param: String,
        /// Where to write the tuning history as JSON lines.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Print the default run file.
    Defaults,
}

fn make_backend(spec: &str, b: &BackendSettings) -> Result<Box<dyn LlmBackend>, String> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
        return Ok(Box::new(ScriptedBackend::from_script(&text)));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        let mut cfg = RemoteConfig::new(url);
        cfg.model = b.model.clone();
        cfg.temperature = b.temperature;
        cfg.auth_env = Some(b.auth_env.clone());
        cfg.timeout = Duration::from_secs(b.timeout_secs);
        return Ok(Box::new(RemoteBackend::new(cfg)));
    }
    Err(format!("backend must be scripted:<file> or remote:<url>, got {spec}"))
}

#[allow(clippy::too_many_arguments)]
fn run(
    trace: PathBuf,
    format: TraceFormat,
    mode: Mode,
    config: Option<PathBuf>,
    backend: Option<String>,
    seed: Option<u64>,
    report: PathBuf,
    report_format: Option<ReportFormat>,
    prefill: Option<f64>,
    sweep_param: String,
    history: Option<PathBuf>,
) -> Result<(), String> {
    let mut rc = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_run_config(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        rc.options.setup.seed = s;
    }
    if let Some(f) = prefill {
        if !(0.0..=1.0).contains(&f) {
            return Err(format!("prefill must lie in [0, 1], got {f}"));
        }
        rc.options.prefill = f;
    }
    let file = File::open(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
    let loaded = load_trace(BufReader::new(file), format).map_err(|e| format!("{}: {e}", trace.display()))?;
    if loaded.skipped > 0 {
        log::warn!("skipped {} malformed trace lines", loaded.skipped);
    }
    let fmt = report_format.unwrap_or_else(|| ReportFormat::from_path(&report));
    let opts = &mut rc.options;
    match mode {
        Mode::Sweep => {
            let param = SweepParam::parse(&sweep_param).ok_or_else(|| format!("unknown sweep parameter {sweep_param}"))?;
            let out = hybrid_ssd::harness::sweep(&loaded.records, opts, param, &SWEEP_MULTIPLIERS).map_err(|e| e.to_string())?;
            emit_sweep(&out, fmt, &report).map_err(|e| format!("{}: {e}", report.display()))?;
        }
        Mode::Default | Mode::Tuned => {
            let base = baseline_time(&loaded.records, opts).map_err(|e| e.to_string())?;
            opts.baseline_time = Some(base);
            let mut tuner = match mode {
                Mode::Tuned => {
                    let spec = backend.as_deref().ok_or("tuned mode needs --backend")?;
                    let mut t = AutoTuner::new(
                        make_backend(spec, &rc.backend)?,
                        ParamBounds::for_page_size(opts.setup.geometry.page_size),
                    );
                    t.max_tokens = rc.backend.max_tokens;
                    t.overlap_tokens = rc.backend.overlap_tokens;
                    t.target_note = rc.backend.target_note.clone();
                    Some(t)
                }
                _ => None,
            };
            let mut out = replay(&loaded.records, opts, tuner.as_mut()).map_err(|e| e.to_string())?;
            out.report.skipped_lines = loaded.skipped;
            emit_report(&out.report, fmt, &report).map_err(|e| format!("{}: {e}", report.display()))?;
            if let Some(h) = history {
                emit_history(&out.history, &h).map_err(|e| format!("{}: {e}", h.display()))?;
            }
            if out.report.partial {
                return Err(format!(
                    "run aborted: {}",
                    out.report.abort_reason.unwrap_or_default()
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Defaults => {
            print!("{}", profile_to_run_file(&ConfigProfile::default()));
            Ok(())
        }
        Command::Run { trace, format, mode, config, backend, seed, report, report_format, prefill, sweep_param, history } => {
            run(trace, format, mode, config, backend, seed, report, report_format, prefill, sweep_param, history)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
