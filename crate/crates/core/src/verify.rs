//! Performance measurement, the degradation gate, and the tuning epoch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Marker, SimError, Simulator};
use crate::trace::{IoKind, TraceRecord};
use crate::tuner::{AutoTuner, EpochTrigger, TuningRecord, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfSnapshot {
    /// Microseconds per request.
    pub mean_latency: f64,
    pub wa: f64,
    pub request_count: u64,
    /// Virtual clock at the start and end of the interval.
    pub span_start: u64,
    pub span_end: u64,
    pub total_latency: u64,
    pub host_pages: u64,
    pub device_pages: u64,
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum MeasureError {
    #[error("no requests since the marker")]
    NoData,
}

/// Snapshot from counter differences between two markers.
pub fn snapshot_between(from: &Marker, to: &Marker) -> Result<PerfSnapshot, MeasureError> {
    let requests = to.requests - from.requests;
    if requests == 0 {
        return Err(MeasureError::NoData);
    }
    let latency = to.latency - from.latency;
    let host = to.host_pages - from.host_pages;
    let device = to.device_pages - from.device_pages;
    Ok(PerfSnapshot {
        mean_latency: latency as f64 / requests as f64,
        wa: if host == 0 { 1.0 } else { device as f64 / host as f64 },
        request_count: requests,
        span_start: from.clock,
        span_end: to.clock,
        total_latency: latency,
        host_pages: host,
        device_pages: device,
    })
}

pub fn measure(sim: &Simulator, since: &Marker) -> Result<PerfSnapshot, MeasureError> {
    snapshot_between(since, &sim.marker())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Rollback,
}

/// Roll back iff the probe's mean latency exceeds the previous one by more
/// than `threshold` (a fraction).
pub fn verify(prev: &PerfSnapshot, probe: &PerfSnapshot, threshold: f64) -> Decision {
    if probe.mean_latency > prev.mean_latency * (1.0 + threshold) {
        Decision::Rollback
    } else {
        Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    /// Host write requests between scheduled epochs.
    pub tuning_interval: u64,
    /// Requests replayed under a new profile before judging it.
    pub investigation_period: u64,
    pub degradation_threshold: f64,
    pub max_iterations: u32,
    /// Let a monitor shift start one extra epoch per interval.
    pub shift_epochs: bool,
}

impl Default for EpochSchedule {
    fn default() -> Self {
        EpochSchedule {
            tuning_interval: 100_000,
            investigation_period: 10_000,
            degradation_threshold: 0.05,
            max_iterations: 10,
            shift_epochs: true,
        }
    }
}

impl EpochSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.tuning_interval == 0 || self.investigation_period == 0 {
            return Err("tuning interval and investigation period must be positive".into());
        }
        if self.investigation_period > self.tuning_interval {
            return Err("investigation period may not exceed the tuning interval".into());
        }
        if !(self.degradation_threshold > 0.0 && self.degradation_threshold < 1.0) {
            return Err("degradation threshold must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochResult {
    pub record: TuningRecord,
    /// Requests consumed from the trace during the investigation period.
    pub requests_replayed: u64,
    pub writes_replayed: u64,
}

fn replay_probe(
    sim: &mut Simulator,
    records: &mut dyn Iterator<Item = &TraceRecord>,
    count: u64,
) -> Result<(u64, u64, bool), SimError> {
    let (mut n, mut writes, mut shift) = (0, 0, false);
    while n < count {
        let Some(r) = records.next() else { break };
        let step = sim.step(r)?;
        n += 1;
        writes += (step.kind == IoKind::Write) as u64;
        shift |= step.shift;
    }
    Ok((n, writes, shift))
}

/// One tuning cycle: propose, apply, probe, judge, and restore on failure.
/// `perf_before` is the period that just ended.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    sim: &mut Simulator,
    tuner: &mut AutoTuner,
    records: &mut dyn Iterator<Item = &TraceRecord>,
    schedule: &EpochSchedule,
    history: &[TuningRecord],
    perf_before: Option<PerfSnapshot>,
    trigger: EpochTrigger,
) -> Result<EpochResult, SimError> {
    let before = sim.config().clone();
    let proposal = tuner.propose(&sim.system_info(perf_before), history, &before);
    let mut record = TuningRecord {
        epoch: history.len() as u64,
        trigger,
        prompt: proposal.prompt.text(),
        segments: proposal.segments,
        raw_response: proposal.raw_response,
        reason: proposal.reason,
        corrections: Vec::new(),
        config_before: before.clone(),
        proposed: None,
        config_after: before.clone(),
        perf_before,
        perf_after: None,
        verdict: Verdict::Rejected,
        improved: false,
        error: None,
    };
    let reject = |mut record: TuningRecord, why: String| {
        log::info!("epoch {} rejected: {why}", record.epoch);
        record.error = Some(why);
        EpochResult { record, requests_replayed: 0, writes_replayed: 0 }
    };
    let corrected = match proposal.outcome {
        Ok(c) => c,
        Err(e) => return Ok(reject(record, e)),
    };
    record.corrections = corrected.log.clone();
    record.proposed = Some(corrected.profile.clone());
    if corrected.profile == before {
        return Ok(reject(record, "proposal leaves the configuration unchanged".into()));
    }
    let Some(prev) = perf_before else {
        return Ok(reject(record, "no baseline measurement".into()));
    };
    sim.apply_config(&corrected.profile)?;
    let mark = sim.marker();
    let (requests, writes, _) = replay_probe(sim, records, schedule.investigation_period)?;
    let probe = match measure(sim, &mark) {
        Ok(p) => p,
        Err(e) => {
            sim.apply_config(&before)?;
            let mut out = reject(record, format!("investigation period empty: {e}"));
            out.record.config_after = before;
            return Ok(out);
        }
    };
    record.perf_after = Some(probe);
    record.improved = probe.mean_latency < prev.mean_latency;
    match verify(&prev, &probe, schedule.degradation_threshold) {
        Decision::Rollback => {
            sim.apply_config(&before)?;
            record.verdict = Verdict::RolledBack;
            record.config_after = before;
        }
        Decision::Accept => {
            record.verdict = if corrected.any_adjusted() { Verdict::Corrected } else { Verdict::Accepted };
            record.config_after = corrected.profile;
        }
    }
    log::info!(
        "epoch {}: {:?}, mean latency {:.1}us -> {:.1}us",
        record.epoch,
        record.verdict,
        prev.mean_latency,
        probe.mean_latency
    );
    Ok(EpochResult { record, requests_replayed: requests, writes_replayed: writes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(mean_ms: f64) -> PerfSnapshot {
        PerfSnapshot {
            mean_latency: mean_ms * 1000.0,
            wa: 1.0,
            request_count: 10,
            span_start: 0,
            span_end: 0,
            total_latency: 0,
            host_pages: 0,
            device_pages: 0,
        }
    }

    #[test]
    fn five_percent_gate() {
        assert_eq!(verify(&snap(1.0), &snap(1.06), 0.05), Decision::Rollback);
        assert_eq!(verify(&snap(1.0), &snap(1.04), 0.05), Decision::Accept);
        assert_eq!(verify(&snap(1.0), &snap(1.0), 0.05), Decision::Accept);
    }

    #[test]
    fn snapshot_arithmetic() {
        let from = Marker::default();
        let to = Marker { requests: 10, latency: 2000, host_pages: 0, device_pages: 0, clock: 2000 };
        let s = snapshot_between(&from, &to).unwrap();
        assert_eq!(s.mean_latency, 200.0);
        assert_eq!(s.wa, 1.0);
        let gc = Marker { host_pages: 8, device_pages: 12, ..to };
        assert_eq!(snapshot_between(&from, &gc).unwrap().wa, 1.5);
        assert_eq!(snapshot_between(&to, &to), Err(MeasureError::NoData));
    }

    #[test]
    fn schedule_validation() {
        assert!(EpochSchedule::default().validate().is_ok());
        let bad = EpochSchedule { investigation_period: 200_000, ..EpochSchedule::default() };
        assert!(bad.validate().is_err());
        let bad = EpochSchedule { degradation_threshold: 0.0, ..EpochSchedule::default() };
        assert!(bad.validate().is_err());
    }
}
