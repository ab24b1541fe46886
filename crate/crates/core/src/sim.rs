//! One simulated device with its full management stack, advanced one trace
//! request at a time on a closed-loop virtual clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigProfile, ParamBounds};
use crate::ftl::{Ftl, FtlError, SpaceThresholds, DEFAULT_ACTION_BOUND};
use crate::hotness::{Hotness, HotnessClassifier, HotnessError, KmeansInit, KmeansParams};
use crate::monitor::{WindowEntry, WorkloadMonitor, WorkloadSummary};
use crate::rl::{observe_state, AgentManager, QAgent, RlHyperparams};
use crate::ssd::{CellMode, FlashGeometry, LatencyModel, SsdError};
use crate::trace::{IoKind, TraceRecord};
use crate::tuner::prompt::SystemInfo;
use crate::units::Micros;
use crate::verify::PerfSnapshot;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Ftl(#[from] FtlError),
    #[error(transparent)]
    Device(#[from] SsdError),
    #[error(transparent)]
    Hotness(#[from] HotnessError),
    #[error("configuration out of bounds: {0}")]
    Config(String),
}

/// Fixed, non-tunable simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub geometry: FlashGeometry,
    pub latency: LatencyModel,
    /// Fraction of blocks that start in SLC mode.
    pub initial_mode_split: f64,
    pub seed: u64,
    /// K-means convergence threshold in normalized feature space.
    pub kmeans_tol: f64,
    pub action_bound: u32,
}

impl SimSetup {
    /// Small geometry for tests and desk runs: 4 channels of 64 blocks,
    /// 16 SLC / 64 QLC pages per block, half the blocks starting as SLC.
    pub fn desk() -> Self {
        SimSetup {
            geometry: FlashGeometry::new(4, 64, 16, 16 * 1024, 0.125),
            latency: LatencyModel::default(),
            initial_mode_split: 0.5,
            seed: 0,
            kmeans_tol: 1e-4,
            action_bound: DEFAULT_ACTION_BOUND,
        }
    }

    pub fn full_scale() -> Self {
        SimSetup {
            geometry: FlashGeometry::full_scale(),
            ..SimSetup::desk()
        }
    }
}

/// Counter values at some instant, for interval measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Marker {
    pub requests: u64,
    pub latency: u64,
    pub host_pages: u64,
    pub device_pages: u64,
    pub clock: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub latency: Micros,
    pub kind: IoKind,
    /// The monitor flagged a workload shift on this request.
    pub shift: bool,
}

pub struct Simulator {
    setup: SimSetup,
    config: ConfigProfile,
    bounds: ParamBounds,
    ftl: Ftl,
    classifier: HotnessClassifier,
    agent: QAgent,
    monitor: WorkloadMonitor,
    /// Closed-loop virtual time: cumulative service latency, microseconds.
    clock: u64,
    requests: u64,
    total_latency: u64,
    classifications: u64,
}

fn thresholds(c: &ConfigProfile, bound: u32) -> SpaceThresholds {
    SpaceThresholds {
        gc_trigger_pct: c.gc_trigger_threshold,
        conversion_trigger_pct: c.conversion_trigger_threshold,
        gc_granularity: c.gc_granularity,
        conversion_granularity: c.conversion_granularity,
        action_bound: bound,
    }
}

fn rl_params(c: &ConfigProfile) -> RlHyperparams {
    RlHyperparams {
        alpha: c.rl_learning_rate,
        gamma: c.rl_discount,
        epsilon: c.rl_exploration,
        reward_latency_threshold: c.rl_reward_threshold,
        training_interval: c.rl_training_interval,
    }
}

impl Simulator {
    pub fn new(setup: SimSetup, config: ConfigProfile) -> Result<Self, SimError> {
        setup.latency.validate()?;
        let bounds = ParamBounds::for_page_size(setup.geometry.page_size);
        let problems = bounds.violations(&config);
        if !problems.is_empty() {
            return Err(SimError::Config(problems.join("; ")));
        }
        let ftl = Ftl::build(
            setup.geometry.clone(),
            setup.latency.clone(),
            setup.initial_mode_split,
            config.placement_strategy,
        )?;
        let params = KmeansParams {
            k: 2,
            max_iterations: config.kmeans_max_iterations,
            tol: setup.kmeans_tol,
            init: KmeansInit::Extremes,
        };
        let classifier = HotnessClassifier::new(
            config.slice_size,
            setup.geometry.page_size,
            params,
            config.kmeans_trigger_threshold,
        )?;
        let agent = QAgent::new(rl_params(&config), setup.seed);
        let monitor = WorkloadMonitor::new(config.window_size as usize, config.std_dev_threshold);
        Ok(Simulator {
            setup,
            config,
            bounds,
            ftl,
            classifier,
            agent,
            monitor,
            clock: 0,
            requests: 0,
            total_latency: 0,
            classifications: 0,
        })
    }

    pub fn setup(&self) -> &SimSetup {
        &self.setup
    }

    pub fn config(&self) -> &ConfigProfile {
        &self.config
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn ftl(&self) -> &Ftl {
        &self.ftl
    }

    pub fn ftl_mut(&mut self) -> &mut Ftl {
        &mut self.ftl
    }

    pub fn agent(&self) -> &QAgent {
        &self.agent
    }

    pub fn classifier(&self) -> &HotnessClassifier {
        &self.classifier
    }

    pub fn monitor(&self) -> &WorkloadMonitor {
        &self.monitor
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn classifications(&self) -> u64 {
        self.classifications
    }

    /// Swaps in a new profile between requests.
    pub fn apply_config(&mut self, config: &ConfigProfile) -> Result<(), SimError> {
        let problems = self.bounds.violations(config);
        if !problems.is_empty() {
            return Err(SimError::Config(problems.join("; ")));
        }
        self.ftl.set_policy(config.placement_strategy);
        self.classifier.set_slice_size(config.slice_size, self.clock)?;
        self.classifier.params.max_iterations = config.kmeans_max_iterations;
        self.classifier.trigger_threshold = config.kmeans_trigger_threshold;
        self.monitor.set_window_size(config.window_size as usize);
        self.monitor.std_threshold = config.std_dev_threshold;
        self.agent.params = rl_params(config);
        self.config = config.clone();
        Ok(())
    }

    pub fn marker(&self) -> Marker {
        let wa = self.ftl.wa_counters();
        Marker {
            requests: self.requests,
            latency: self.total_latency,
            host_pages: wa.host_pages_written,
            device_pages: wa.device_pages_written,
            clock: self.clock,
        }
    }

    /// Maps a trace request onto the logical space: the start page wraps
    /// modulo capacity and a request running past the end is shifted back.
    pub fn map_request(&self, rec: &TraceRecord) -> (u64, u64) {
        let logical = self.ftl.logical_pages().max(1);
        let (first, n) = rec.page_span(self.setup.geometry.page_size);
        let n = n.min(logical);
        let lpn = (first % logical).min(logical - n);
        (lpn, n)
    }

    pub fn step(&mut self, rec: &TraceRecord) -> Result<StepResult, SimError> {
        let (lpn, n) = self.map_request(rec);
        let mut hot = false;
        let latency = match rec.kind {
            IoKind::Write => {
                let label = self.classifier.label_of(lpn);
                hot = label == Hotness::Hot;
                let mut lat = self.ftl.handle_write(lpn, n, label)?;
                let mut last_slice = None;
                for p in lpn..lpn + n {
                    let s = self.classifier.stats().slice(p);
                    if last_slice != Some(s) {
                        self.classifier.record_update(p, self.clock);
                        last_slice = Some(s);
                    }
                }
                if self.classifier.note_write(self.clock).is_some() {
                    self.classifications += 1;
                }
                let (write_rate, hot_write_fraction) = self
                    .monitor
                    .last_summary()
                    .map_or((0.0, 0.0), |s| (s.writes_per_virtual_second, s.hot_write_fraction));
                let th = thresholds(&self.config, self.setup.action_bound);
                let mut manager = AgentManager { agent: &mut self.agent, write_rate, hot_write_fraction };
                lat += self.ftl.maybe_trigger_space_mgmt(&th, &mut manager)?;
                lat
            }
            IoKind::Read => self.ftl.handle_read(lpn, n),
        };
        if self.agent.on_request(latency) {
            let state = observe_state(&self.state_inputs(), &self.agent.calibrator);
            self.agent.train(state);
        }
        self.clock += latency.as_u64();
        self.requests += 1;
        self.total_latency += latency.as_u64();
        let entry = WindowEntry { lpn, kind: rec.kind, pages: n, timestamp: self.clock, hot };
        let mut shift = false;
        if let Some(s) = self.monitor.observe(entry) {
            shift = s.shift_detected;
            let rate = s.writes_per_virtual_second;
            self.agent.calibrator.observe(rate);
        }
        Ok(StepResult { latency, kind: rec.kind, shift })
    }

    fn state_inputs(&self) -> crate::rl::StateInputs {
        let (write_rate, hot_write_fraction) = self
            .monitor
            .last_summary()
            .map_or((0.0, 0.0), |s| (s.writes_per_virtual_second, s.hot_write_fraction));
        crate::rl::StateInputs {
            slc_free_fraction: self.ftl.free_fraction(CellMode::Slc),
            qlc_free_fraction: self.ftl.free_fraction(CellMode::Qlc),
            write_rate,
            hot_write_fraction,
        }
    }

    /// Writes the first `fraction` of the logical space sequentially in
    /// 64-page requests.
    pub fn prefill(&mut self, fraction: f64) -> Result<(), SimError> {
        let fraction = fraction.clamp(0.0, 1.0);
        let pages = (self.ftl.logical_pages() as f64 * fraction) as u64;
        let page = self.setup.geometry.page_size;
        let mut lpn = 0;
        while lpn < pages {
            let n = (pages - lpn).min(64);
            let rec = TraceRecord { timestamp: 0, kind: IoKind::Write, offset: lpn * page, size: n * page, line: 0 };
            self.step(&rec)?;
            lpn += n;
        }
        Ok(())
    }

    pub fn workload(&self) -> Option<&WorkloadSummary> {
        self.monitor.last_summary()
    }

    pub fn system_info(&self, recent: Option<PerfSnapshot>) -> SystemInfo {
        SystemInfo {
            geometry: self.setup.geometry.clone(),
            latency: self.setup.latency.clone(),
            slc_blocks: self.ftl.region_blocks(CellMode::Slc),
            qlc_blocks: self.ftl.region_blocks(CellMode::Qlc),
            slc_free_fraction: self.ftl.free_fraction(CellMode::Slc),
            qlc_free_fraction: self.ftl.free_fraction(CellMode::Qlc),
            workload: self.monitor.last_summary().copied(),
            recent,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, SynthSpec};

    fn desk_config() -> ConfigProfile {
        ConfigProfile { slice_size: 4 << 20, kmeans_trigger_threshold: 1000, ..ConfigProfile::default() }
    }

    #[test]
    fn wraps_and_shifts_requests() {
        let sim = Simulator::new(SimSetup::desk(), desk_config()).unwrap();
        let logical = sim.ftl().logical_pages();
        let page = 16 * 1024;
        let rec = |offset, size| TraceRecord { timestamp: 0, kind: IoKind::Write, offset, size, line: 1 };
        assert_eq!(sim.map_request(&rec(logical * page + 3 * page, page)), (3, 1));
        assert_eq!(sim.map_request(&rec((logical - 1) * page, 4 * page)), (logical - 4, 4));
    }

    #[test]
    fn replay_runs_and_audits() {
        let mut sim = Simulator::new(SimSetup::desk(), desk_config()).unwrap();
        let spec = SynthSpec {
            ops: 20_000,
            span_bytes: sim.ftl().logical_pages() * 16 * 1024,
            seed: 5,
            ..SynthSpec::default()
        };
        for r in synth_trace(&spec) {
            sim.step(&r).unwrap();
        }
        sim.ftl().audit().unwrap();
        assert!(sim.classifications() > 0);
        assert!(sim.ftl().wa_coefficient().unwrap() >= 1.0);
        assert_eq!(sim.marker().requests, 20_000);
    }

    #[test]
    fn rejects_out_of_bounds_profile() {
        let bad = ConfigProfile { rl_learning_rate: 3.0, ..desk_config() };
        assert!(matches!(Simulator::new(SimSetup::desk(), bad), Err(SimError::Config(_))));
        let mut sim = Simulator::new(SimSetup::desk(), desk_config()).unwrap();
        let misaligned = ConfigProfile { slice_size: 1000, ..desk_config() };
        assert!(sim.apply_config(&misaligned).is_err());
        assert_eq!(sim.config(), &desk_config());
    }
}
