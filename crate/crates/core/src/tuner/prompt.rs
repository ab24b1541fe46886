//! Five-stage prompt assembly and token-bounded segmentation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigProfile, Param};
use crate::monitor::WorkloadSummary;
use crate::ssd::{FlashGeometry, LatencyModel};
use crate::tuner::TuningRecord;
use crate::verify::PerfSnapshot;

/// History entries rendered into stage four.
pub const HISTORY_HORIZON: usize = 10;
/// Reason excerpts longer than this are cut in the history stage.
const REASON_EXCERPT: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    RoleAssignment,
    HybridSsdOverview,
    SsdManagement,
    HistoryAndPerformance,
    SpecifyRequirements,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::RoleAssignment,
        Stage::HybridSsdOverview,
        Stage::SsdManagement,
        Stage::HistoryAndPerformance,
        Stage::SpecifyRequirements,
    ];
}

/// Device state handed to the prompt builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub geometry: FlashGeometry,
    pub latency: LatencyModel,
    pub slc_blocks: u32,
    pub qlc_blocks: u32,
    pub slc_free_fraction: f64,
    pub qlc_free_fraction: f64,
    pub workload: Option<WorkloadSummary>,
    pub recent: Option<PerfSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// One text per [`Stage`], in order.
    pub stages: Vec<String>,
    pub estimated_tokens: usize,
    /// Stage four pieces kept apart so segmentation can drop the oldest.
    history_header: String,
    history_entries: Vec<String>,
}

/// Characters-per-token heuristic.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

impl PromptBundle {
    fn assemble(stages: Vec<String>, history_header: String, history_entries: Vec<String>) -> Self {
        let mut b = PromptBundle {
            stages,
            estimated_tokens: 0,
            history_header,
            history_entries,
        };
        b.estimated_tokens = estimate_tokens(&b.text());
        b
    }

    pub fn stage(&self, s: Stage) -> &str {
        &self.stages[Stage::ALL.iter().position(|&x| x == s).unwrap_or(0)]
    }

    /// Full prompt, stages separated by blank lines.
    pub fn text(&self) -> String {
        self.stages.join("\n\n")
    }

    pub fn history_len(&self) -> usize {
        self.history_entries.len()
    }

    /// Copy without the `n` oldest history entries.
    fn drop_oldest(&self, n: usize) -> PromptBundle {
        let kept: Vec<String> = self.history_entries.iter().skip(n).cloned().collect();
        let mut stages = self.stages.clone();
        stages[3] = history_stage(&self.history_header, &kept, self.history_entries.len() - kept.len());
        PromptBundle::assemble(stages, self.history_header.clone(), kept)
    }
}

fn pct(f: f64) -> String {
    format!("{:.1}%", f * 100.0)
}

fn role_stage() -> String {
    "You are an SSD expert specializing in flash translation layer design for hybrid SLC/QLC \
     solid state drives. You tune firmware configuration parameters of a running device so \
     that it finishes the host workload sooner and writes less to flash."
        .to_string()
}

fn overview_stage(info: &SystemInfo) -> String {
    let g = &info.geometry;
    let l = &info.latency;
    let mut s = String::new();
    let _ = writeln!(s, "Device under management:");
    let _ = writeln!(
        s,
        "- {} channels, {} blocks per channel, page size {} KB, over-provisioning {}.",
        g.channels,
        g.blocks_per_channel,
        g.page_size / 1024,
        pct(g.op_ratio)
    );
    let _ = writeln!(
        s,
        "- A block holds {} pages in SLC mode or {} pages in QLC mode; erased blocks can be switched from SLC to QLC.",
        g.pages_per_block_slc, g.pages_per_block_qlc
    );
    let _ = writeln!(
        s,
        "- Latency: read {} SLC / {} QLC, program {} SLC / {} QLC, erase {} SLC / {} QLC.",
        l.read_slc, l.read_qlc, l.write_slc, l.write_qlc, l.erase_slc, l.erase_qlc
    );
    let _ = writeln!(
        s,
        "- Current layout: {} SLC blocks ({} free), {} QLC blocks ({} free).",
        info.slc_blocks,
        pct(info.slc_free_fraction),
        info.qlc_blocks,
        pct(info.qlc_free_fraction)
    );
    match &info.workload {
        Some(w) => {
            let _ = write!(
                s,
                "- Recent workload: write ratio {}, mean request {:.1} pages, LPN mean {:.0} and std {:.0}, \
                 hot write share {}, {:.0} writes per simulated second{}.",
                pct(w.write_ratio),
                w.mean_request_size,
                w.mean_lpn,
                w.std_lpn,
                pct(w.hot_write_fraction),
                w.writes_per_virtual_second,
                if w.shift_detected { ", workload shift just detected" } else { "" }
            );
        }
        None => {
            let _ = write!(s, "- Recent workload: not yet observed.");
        }
    }
    if let Some(p) = &info.recent {
        let _ = write!(
            s,
            "\n- Last measured period: {} requests, mean latency {:.1}us, write amplification {:.3}.",
            p.request_count, p.mean_latency, p.wa
        );
    }
    s
}

fn role_of(p: Param) -> &'static str {
    match p {
        Param::ConversionGranularity => "SLC blocks converted to QLC per conversion action",
        Param::ConversionTriggerThreshold => "free SLC block percentage below which conversion becomes possible",
        Param::GcGranularity => "victim blocks collected per GC action",
        Param::GcTriggerThreshold => "free block percentage of a region below which GC starts",
        Param::PlacementStrategy => "SLC first, or Hotness based (hot to SLC, cold to QLC)",
        Param::WindowSize => "requests in the workload monitoring window",
        Param::StdDevThreshold => "LPN standard deviation change that marks a workload shift",
        Param::SliceSize => "address range sharing one hotness statistic",
        Param::KmeansMaxIterations => "iteration cap of each hot/cold clustering",
        Param::KmeansTriggerThreshold => "writes between two hot/cold clusterings",
        Param::RlTrainingInterval => "requests between Q-table updates",
        Param::RlLearningRate => "Q-learning step size",
        Param::RlRewardThreshold => "mean response time at or below which the agent is rewarded",
        Param::RlDiscount => "weight of future rewards",
        Param::RlExploration => "probability of a random space management action",
    }
}

fn management_stage(current: &ConfigProfile) -> String {
    let mut s = String::from(
        "Management stack: a K-means classifier labels address slices hot or cold from their update \
         count and mean update interval; a Q-learning agent picks one of SLC internal GC, QLC \
         internal GC, SLC-to-QLC GC, SLC-to-QLC conversion or idle whenever free space runs low; a \
         sliding-window monitor tracks the request stream and flags shifts.\nCurrent configuration:",
    );
    for (i, p) in Param::ALL.into_iter().enumerate() {
        let _ = write!(s, "\n{}.{}: {} ({})", i + 1, p.display_name(), current.display_value(p), role_of(p));
    }
    s
}

fn history_line(r: &TuningRecord) -> String {
    let mut s = format!("Epoch {} ({:?}): {:?}.", r.epoch, r.trigger, r.verdict);
    let changed: Vec<String> = r
        .config_before
        .diff(r.proposed.as_ref().unwrap_or(&r.config_before))
        .into_iter()
        .map(|p| {
            let after = r.proposed.as_ref().map(|c| c.display_value(p)).unwrap_or_default();
            format!("{} {} -> {}", p.display_name(), r.config_before.display_value(p), after)
        })
        .collect();
    if changed.is_empty() {
        s.push_str(" No parameter changed.");
    } else {
        let _ = write!(s, " Changed {}.", changed.join(", "));
    }
    if let Some(p) = &r.proposed {
        let all: Vec<String> = Param::ALL
            .into_iter()
            .map(|q| format!("{}: {}", q.display_name(), p.display_value(q)))
            .collect();
        let _ = write!(s, " Configuration tried: {}.", all.join("; "));
    }
    if let (Some(b), Some(a)) = (&r.perf_before, &r.perf_after) {
        let delta = if b.mean_latency > 0.0 {
            (a.mean_latency / b.mean_latency - 1.0) * 100.0
        } else {
            0.0
        };
        let _ = write!(
            s,
            " Mean latency {:.1}us -> {:.1}us ({delta:+.2}%), WA {:.3} -> {:.3}.",
            b.mean_latency, a.mean_latency, b.wa, a.wa
        );
    }
    if let Some(e) = &r.error {
        let _ = write!(s, " Error: {e}.");
    }
    let reason: String = r.reason.split_whitespace().collect::<Vec<_>>().join(" ");
    if !reason.is_empty() {
        let cut: String = reason.chars().take(REASON_EXCERPT).collect();
        let _ = write!(s, " Stated reason: {cut}");
    }
    s
}

fn history_stage(header: &str, entries: &[String], dropped: usize) -> String {
    if entries.is_empty() && dropped == 0 {
        return format!("{header}\nThere have been no prior adjustments.");
    }
    let mut s = header.to_string();
    if dropped > 0 {
        let _ = write!(s, "\n({dropped} older entries omitted.)");
    }
    for e in entries {
        s.push('\n');
        s.push_str(e);
    }
    s
}

fn requirements_stage(target_note: &str) -> String {
    let names: Vec<&str> = Param::ALL.iter().map(|p| p.display_name()).collect();
    let mut s = String::from(
        "Goal: lower total execution time and lower write amplification. A change that slows the \
         next 10000 operations by more than 5% is reverted.",
    );
    if !target_note.trim().is_empty() {
        let _ = write!(s, "\n{}", target_note.trim());
    }
    let _ = write!(
        s,
        "\nOutput format: write one line `New configuration:` followed by a single backtick-quoted \
         list of `index.name: value` items separated by semicolons, for example\n\
         New configuration: `1.K-means trigger threshold: 1000; 2.Windows size: 1500`\n\
         Use only these names: {}. Thresholds are percentages, the slice size takes a unit such as \
         MB, the RL reward takes a time unit such as ms, and the placement strategy is SLC first \
         or Hotness based. Omitted parameters keep their value. Put your reasoning after the \
         closing backtick.",
        names.join(", ")
    );
    s
}

/// Deterministic text assembly from device state, history and config.
pub fn build_prompt(
    info: &SystemInfo,
    history: &[TuningRecord],
    current: &ConfigProfile,
    target_note: &str,
) -> PromptBundle {
    let start = history.len().saturating_sub(HISTORY_HORIZON);
    let header = "Recent adjustments and their measured effect:".to_string();
    let entries: Vec<String> = history[start..].iter().map(history_line).collect();
    let stages = vec![
        role_stage(),
        overview_stage(info),
        management_stage(current),
        history_stage(&header, &entries, 0),
        requirements_stage(target_note),
    ];
    PromptBundle::assemble(stages, header, entries)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("overlap {overlap} must be smaller than the segment limit {max}")]
    BadOverlap { max: usize, overlap: usize },
}

/// Splits a bundle into segments of at most `max_tokens`. Each segment after
/// the first begins with the final `overlap_tokens` of its predecessor. When
/// one stage alone exceeds the limit, the oldest history entries are dropped
/// first.
pub fn segment_prompt(
    bundle: &PromptBundle,
    max_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<String>, SegmentError> {
    if max_tokens == 0 || overlap_tokens >= max_tokens {
        return Err(SegmentError::BadOverlap { max: max_tokens, overlap: overlap_tokens });
    }
    let over = |b: &PromptBundle| b.stages.iter().any(|s| estimate_tokens(s) > max_tokens);
    let mut trimmed = None;
    if over(bundle) {
        for n in 1..=bundle.history_entries.len() {
            let candidate = bundle.drop_oldest(n);
            let done = !over(&candidate);
            trimmed = Some(candidate);
            if done {
                break;
            }
        }
    }
    let bundle = trimmed.as_ref().unwrap_or(bundle);
    let text = bundle.text();
    if estimate_tokens(&text) <= max_tokens {
        return Ok(vec![text]);
    }
    let chars: Vec<char> = text.chars().collect();
    let width = max_tokens * 4;
    let overlap = overlap_tokens * 4;
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut end = width.min(chars.len());
    out.push(chars[..end].iter().collect::<String>());
    while end < chars.len() {
        start = end - overlap.min(end - start);
        let next_end = (start + width).min(chars.len());
        out.push(chars[start..next_end].iter().collect());
        end = next_end;
    }
    Ok(out)
}
