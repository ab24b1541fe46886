//! The model-facing half of the tuning loop: prompt, query, parse, correct.

pub mod backend;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigProfile, ParamBounds};
use crate::verify::PerfSnapshot;

use backend::LlmBackend;
use parse::{correct_mistakes, parse_config, Corrected, Correction};
use prompt::{build_prompt, segment_prompt, PromptBundle, SystemInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    RolledBack,
    /// Applied after clamping or alignment, then survived verification.
    Corrected,
    /// Nothing was applied.
    Rejected,
}

impl Verdict {
    /// Whether a configuration change stayed in effect.
    pub fn kept(self) -> bool {
        matches!(self, Verdict::Accepted | Verdict::Corrected)
    }

    /// Whether the epoch counts as an adjustment.
    pub fn is_adjustment(self) -> bool {
        self != Verdict::Rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochTrigger {
    Scheduled,
    Shift,
}

/// One tuning cycle, written once when the cycle ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub epoch: u64,
    pub trigger: EpochTrigger,
    pub prompt: String,
    pub segments: usize,
    pub raw_response: String,
    pub reason: String,
    pub corrections: Vec<Correction>,
    pub config_before: ConfigProfile,
    /// Profile that was tried, if one was produced.
    pub proposed: Option<ConfigProfile>,
    /// Profile active once the epoch finished.
    pub config_after: ConfigProfile,
    pub perf_before: Option<PerfSnapshot>,
    pub perf_after: Option<PerfSnapshot>,
    pub verdict: Verdict,
    /// Probe mean latency strictly below the pre-epoch mean latency.
    pub improved: bool,
    pub error: Option<String>,
}

/// Correct adjustments over all adjustments, or `None` when no adjustment
/// was made. An adjustment is correct when it was kept and improved latency.
pub fn accuracy(history: &[TuningRecord]) -> Option<f64> {
    let total = history.iter().filter(|r| r.verdict.is_adjustment()).count();
    if total == 0 {
        return None;
    }
    let good = history.iter().filter(|r| r.verdict.kept() && r.improved).count();
    Some(good as f64 / total as f64)
}

/// Result of one prompt/response round.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub prompt: PromptBundle,
    pub segments: usize,
    pub raw_response: String,
    pub reason: String,
    /// Corrected profile, or why none could be produced.
    pub outcome: Result<Corrected, String>,
}

pub struct AutoTuner {
    backend: Box<dyn LlmBackend>,
    pub bounds: ParamBounds,
    pub max_tokens: usize,
    pub overlap_tokens: usize,
    pub target_note: String,
}

impl AutoTuner {
    pub fn new(backend: Box<dyn LlmBackend>, bounds: ParamBounds) -> Self {
        AutoTuner {
            backend,
            bounds,
            max_tokens: 4096,
            overlap_tokens: 256,
            target_note: String::new(),
        }
    }

    pub fn backend_name(&self) -> String {
        self.backend.describe()
    }

    pub fn propose(&mut self, info: &SystemInfo, history: &[TuningRecord], current: &ConfigProfile) -> Proposal {
        let bundle = build_prompt(info, history, current, &self.target_note);
        let segments = match segment_prompt(&bundle, self.max_tokens, self.overlap_tokens) {
            Ok(s) => s,
            Err(e) => {
                return Proposal {
                    segments: 0,
                    prompt: bundle,
                    raw_response: String::new(),
                    reason: String::new(),
                    outcome: Err(e.to_string()),
                }
            }
        };
        let n = segments.len();
        let raw = match self.backend.query(&segments) {
            Ok(r) => r,
            Err(e) => {
                return Proposal {
                    prompt: bundle,
                    segments: n,
                    raw_response: String::new(),
                    reason: String::new(),
                    outcome: Err(e.to_string()),
                }
            }
        };
        let (reason, outcome) = match parse_config(&raw) {
            Ok(parsed) => (
                parsed.reason,
                correct_mistakes(&parsed.candidates, &self.bounds, current).map_err(|e| e.to_string()),
            ),
            Err(e) => (String::new(), Err(e.to_string())),
        };
        Proposal { prompt: bundle, segments: n, raw_response: raw, reason, outcome }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(verdict: Verdict, improved: bool) -> TuningRecord {
        TuningRecord {
            epoch: 0,
            trigger: EpochTrigger::Scheduled,
            prompt: String::new(),
            segments: 1,
            raw_response: String::new(),
            reason: String::new(),
            corrections: Vec::new(),
            config_before: ConfigProfile::default(),
            proposed: None,
            config_after: ConfigProfile::default(),
            perf_before: None,
            perf_after: None,
            verdict,
            improved,
            error: None,
        }
    }

    #[test]
    fn accuracy_counts() {
        let all_good: Vec<_> = (0..4).map(|_| rec(Verdict::Accepted, true)).collect();
        assert_eq!(accuracy(&all_good), Some(1.0));
        let rejected: Vec<_> = (0..3).map(|_| rec(Verdict::Rejected, false)).collect();
        assert_eq!(accuracy(&rejected), None);
        let mixed = vec![
            rec(Verdict::Accepted, true),
            rec(Verdict::Corrected, true),
            rec(Verdict::Accepted, false),
            rec(Verdict::RolledBack, false),
            rec(Verdict::Rejected, false),
        ];
        assert_eq!(accuracy(&mixed), Some(0.5));
    }
}
