//! Fixed-size sliding window over recent requests with standard-deviation
//! based shift detection on the spatial (LPN) distribution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ssd::Lpn;
use crate::trace::IoKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub lpn: Lpn,
    pub kind: IoKind,
    pub pages: u64,
    /// Virtual time in microseconds.
    pub timestamp: u64,
    pub hot: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum MonitorError {
    #[error("window is empty")]
    NoData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        SlidingWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: WindowEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Shrinking drops the oldest entries.
    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(2);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    pub write_ratio: f64,
    pub mean_lpn: f64,
    pub std_lpn: f64,
    pub mean_request_size: f64,
    pub writes_per_virtual_second: f64,
    pub hot_write_fraction: f64,
    pub shift_detected: bool,
}

/// Population statistics of the window. A shift is flagged when the LPN
/// standard deviation moved by more than `std_threshold` pages since `prev`.
pub fn summarize(
    window: &SlidingWindow,
    prev: Option<&WorkloadSummary>,
    std_threshold: f64,
) -> Result<WorkloadSummary, MonitorError> {
    if window.is_empty() {
        return Err(MonitorError::NoData);
    }
    let n = window.len() as f64;
    let mut writes = 0u64;
    let mut hot_writes = 0u64;
    let mut lpn_sum = 0.0;
    let mut size_sum = 0.0;
    for e in window.entries() {
        lpn_sum += e.lpn as f64;
        size_sum += e.pages as f64;
        if e.kind == IoKind::Write {
            writes += 1;
            hot_writes += e.hot as u64;
        }
    }
    let mean = lpn_sum / n;
    let var = window
        .entries()
        .map(|e| (e.lpn as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let first = window.entries.front().map(|e| e.timestamp).unwrap_or(0);
    let last = window.entries.back().map(|e| e.timestamp).unwrap_or(0);
    let span_s = (last.saturating_sub(first)).max(1) as f64 / 1e6;
    let shift = prev.is_some_and(|p| (std - p.std_lpn).abs() > std_threshold);
    Ok(WorkloadSummary {
        write_ratio: writes as f64 / n,
        mean_lpn: mean,
        std_lpn: std,
        mean_request_size: size_sum / n,
        writes_per_virtual_second: writes as f64 / span_s,
        hot_write_fraction: if writes > 0 {
            hot_writes as f64 / writes as f64
        } else {
            0.0
        },
        shift_detected: shift,
    })
}

/// Window plus the last summary; a new summary is produced every time the
/// window has been completely refilled.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadMonitor {
    window: SlidingWindow,
    pub std_threshold: f64,
    last: Option<WorkloadSummary>,
    since_summary: usize,
    summaries: u64,
}

impl WorkloadMonitor {
    pub fn new(window_size: usize, std_threshold: f64) -> Self {
        WorkloadMonitor {
            window: SlidingWindow::new(window_size),
            std_threshold,
            last: None,
            since_summary: 0,
            summaries: 0,
        }
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn last_summary(&self) -> Option<&WorkloadSummary> {
        self.last.as_ref()
    }

    pub fn summaries(&self) -> u64 {
        self.summaries
    }

    pub fn set_window_size(&mut self, size: usize) {
        self.window.set_capacity(size);
        self.since_summary = self.since_summary.min(self.window.capacity());
    }

    /// Pushes one request; returns the fresh summary on a refill boundary.
    pub fn observe(&mut self, entry: WindowEntry) -> Option<&WorkloadSummary> {
        self.window.push(entry);
        self.since_summary += 1;
        if self.since_summary < self.window.capacity() {
            return None;
        }
        self.since_summary = 0;
        let summary = summarize(&self.window, self.last.as_ref(), self.std_threshold).ok()?;
        self.last = Some(summary);
        self.summaries += 1;
        self.last.as_ref()
    }
}
