//! Tabular Q-learning over a bucketized view of device and workload state.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ftl::{ActionKind, Ftl, SpaceManager};
use crate::ssd::CellMode;
use crate::units::Micros;

pub const FREE_BUCKETS: u8 = 10;
pub const INTENSITY_BUCKETS: u8 = 4;
pub const HOT_BUCKETS: u8 = 4;
const ACTIONS: usize = ActionKind::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentState {
    pub slc_free_bucket: u8,
    pub qlc_free_bucket: u8,
    pub write_intensity_bucket: u8,
    pub hot_ratio_bucket: u8,
}

impl AgentState {
    pub const COUNT: usize =
        FREE_BUCKETS as usize * FREE_BUCKETS as usize * INTENSITY_BUCKETS as usize * HOT_BUCKETS as usize;

    pub fn index(&self) -> usize {
        let mut i = self.slc_free_bucket as usize;
        i = i * FREE_BUCKETS as usize + self.qlc_free_bucket as usize;
        i = i * INTENSITY_BUCKETS as usize + self.write_intensity_bucket as usize;
        i * HOT_BUCKETS as usize + self.hot_ratio_bucket as usize
    }

    pub fn from_index(i: usize) -> AgentState {
        let hot = i % HOT_BUCKETS as usize;
        let i = i / HOT_BUCKETS as usize;
        let intensity = i % INTENSITY_BUCKETS as usize;
        let i = i / INTENSITY_BUCKETS as usize;
        let qlc = i % FREE_BUCKETS as usize;
        let slc = i / FREE_BUCKETS as usize;
        AgentState {
            slc_free_bucket: slc as u8,
            qlc_free_bucket: qlc as u8,
            write_intensity_bucket: intensity as u8,
            hot_ratio_bucket: hot as u8,
        }
    }
}

/// floor(fraction * buckets), with 1.0 folded into the top bucket.
pub fn bucket(fraction: f64, buckets: u8) -> u8 {
    if !fraction.is_finite() || fraction <= 0.0 {
        return 0;
    }
    ((fraction * buckets as f64).floor() as u64).min(buckets as u64 - 1) as u8
}

/// Rolling sample of observed write rates used to turn a rate into a quartile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCalibrator {
    sample: VecDeque<f64>,
    capacity: usize,
}

impl Default for IntensityCalibrator {
    fn default() -> Self {
        IntensityCalibrator::new(64)
    }
}

impl IntensityCalibrator {
    pub fn new(capacity: usize) -> Self {
        IntensityCalibrator {
            sample: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn observe(&mut self, rate: f64) {
        if !rate.is_finite() {
            return;
        }
        if self.sample.len() == self.capacity {
            self.sample.pop_front();
        }
        self.sample.push_back(rate);
    }

    /// Number of calibration quartile cut points (25th, 50th, 75th, nearest
    /// rank) that `rate` reaches. An empty sample puts everything in bucket 0.
    pub fn quartile(&self, rate: f64) -> u8 {
        if self.sample.is_empty() {
            return 0;
        }
        let mut sorted: Vec<f64> = self.sample.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        [25usize, 50, 75]
            .into_iter()
            .filter(|p| {
                let rank = (p * n).div_ceil(100).max(1);
                rate >= sorted[rank - 1]
            })
            .count() as u8
    }
}

/// Raw inputs the agent state is built from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateInputs {
    pub slc_free_fraction: f64,
    pub qlc_free_fraction: f64,
    pub write_rate: f64,
    pub hot_write_fraction: f64,
}

pub fn observe_state(inputs: &StateInputs, calibrator: &IntensityCalibrator) -> AgentState {
    AgentState {
        slc_free_bucket: bucket(inputs.slc_free_fraction, FREE_BUCKETS),
        qlc_free_bucket: bucket(inputs.qlc_free_fraction, FREE_BUCKETS),
        write_intensity_bucket: calibrator.quartile(inputs.write_rate),
        hot_ratio_bucket: bucket(inputs.hot_write_fraction, HOT_BUCKETS),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlHyperparams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub reward_latency_threshold: Micros,
    pub training_interval: u64,
}

impl Default for RlHyperparams {
    fn default() -> Self {
        RlHyperparams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.1,
            reward_latency_threshold: Micros(1600),
            training_interval: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub state: AgentState,
    pub action: ActionKind,
    pub value: f64,
    pub visits: u64,
}

/// Dense value table over all 1600 states and five actions.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<[f64; ACTIONS]>,
    visits: Vec<[u64; ACTIONS]>,
}

impl Default for QTable {
    fn default() -> Self {
        QTable {
            values: vec![[0.0; ACTIONS]; AgentState::COUNT],
            visits: vec![[0; ACTIONS]; AgentState::COUNT],
        }
    }
}

impl QTable {
    pub fn get(&self, s: AgentState, a: ActionKind) -> f64 {
        self.values[s.index()][a.index()]
    }

    pub fn set(&mut self, s: AgentState, a: ActionKind, v: f64) {
        self.values[s.index()][a.index()] = v;
    }

    pub fn visits(&self, s: AgentState, a: ActionKind) -> u64 {
        self.visits[s.index()][a.index()]
    }

    pub fn max_value(&self, s: AgentState) -> f64 {
        self.values[s.index()].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action among `eligible`; ties go to the earliest action
    /// in [`ActionKind::ALL`] order.
    pub fn greedy(&self, s: AgentState, eligible: &[ActionKind]) -> ActionKind {
        let row = &self.values[s.index()];
        let mut best: Option<ActionKind> = None;
        for a in ActionKind::ALL {
            if !eligible.contains(&a) {
                continue;
            }
            if best.is_none_or(|b| row[a.index()] > row[b.index()]) {
                best = Some(a);
            }
        }
        best.unwrap_or(ActionKind::Idle)
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.values {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Visited entries only, in state/action order.
    pub fn snapshot(&self) -> Vec<QEntry> {
        let mut out = Vec::new();
        for (i, (row, visits)) in self.values.iter().zip(&self.visits).enumerate() {
            for a in ActionKind::ALL {
                if visits[a.index()] > 0 {
                    out.push(QEntry {
                        state: AgentState::from_index(i),
                        action: a,
                        value: row[a.index()],
                        visits: visits[a.index()],
                    });
                }
            }
        }
        out
    }
}

/// Epsilon-greedy choice among `eligible` actions.
pub fn choose_action<R: Rng>(
    table: &QTable,
    state: AgentState,
    epsilon: f64,
    rng: &mut R,
    eligible: &[ActionKind],
) -> ActionKind {
    let explore = rng.random::<f64>() < epsilon;
    if explore && !eligible.is_empty() {
        eligible[rng.random_range(0..eligible.len())]
    } else {
        table.greedy(state, eligible)
    }
}

/// +1 when the average response time meets the threshold, -1 otherwise.
pub fn reward(avg_response_time: f64, threshold: Micros) -> f64 {
    if avg_response_time <= threshold.as_f64() {
        1.0
    } else {
        -1.0
    }
}

pub fn update_q(
    table: &mut QTable,
    s: AgentState,
    a: ActionKind,
    r: f64,
    s_next: AgentState,
    alpha: f64,
    gamma: f64,
) {
    let q = table.get(s, a);
    let target = r + gamma * table.max_value(s_next);
    let mut next = q + alpha * (target - q);
    if !next.is_finite() {
        log::warn!("non-finite Q value for {s:?}/{a:?}; resetting to 0");
        next = 0.0;
    }
    table.set(s, a, next);
    table.visits[s.index()][a.index()] += 1;
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Decision {
    state: AgentState,
    action: ActionKind,
}

/// Online agent. Decisions made during one foreground management burst share
/// the reward earned by the requests that follow, up to the next burst or
/// training point; value updates are applied every `training_interval`
/// requests.
#[derive(Debug, Clone)]
pub struct QAgent {
    table: QTable,
    pub params: RlHyperparams,
    rng: ChaCha8Rng,
    pub calibrator: IntensityCalibrator,
    burst: Vec<Decision>,
    burst_open: bool,
    ready: Vec<(Decision, f64, AgentState)>,
    segment_latency: u64,
    segment_requests: u64,
    since_training: u64,
    updates: u64,
    decisions: u64,
}

/// Cap on transitions held between training points.
const MAX_PENDING: usize = 4096;

impl QAgent {
    pub fn new(params: RlHyperparams, seed: u64) -> Self {
        QAgent {
            table: QTable::default(),
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calibrator: IntensityCalibrator::default(),
            burst: Vec::new(),
            burst_open: false,
            ready: Vec::new(),
            segment_latency: 0,
            segment_requests: 0,
            since_training: 0,
            updates: 0,
            decisions: 0,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    fn close_burst(&mut self, next: AgentState) {
        if self.burst.is_empty() || self.segment_requests == 0 {
            return;
        }
        let avg = self.segment_latency as f64 / self.segment_requests as f64;
        let r = reward(avg, self.params.reward_latency_threshold);
        for d in self.burst.drain(..) {
            if self.ready.len() < MAX_PENDING {
                self.ready.push((d, r, next));
            }
        }
        self.segment_latency = 0;
        self.segment_requests = 0;
    }

    pub fn decide(&mut self, state: AgentState, eligible: &[ActionKind]) -> ActionKind {
        if !self.burst_open {
            self.close_burst(state);
            self.burst.clear();
            self.segment_latency = 0;
            self.segment_requests = 0;
            self.burst_open = true;
        }
        let action = choose_action(&self.table, state, self.params.epsilon, &mut self.rng, eligible);
        self.burst.push(Decision { state, action });
        self.decisions += 1;
        action
    }

    /// Accounts one completed request. Returns true when a training step is
    /// due; the caller then supplies the current state to [`QAgent::train`].
    pub fn on_request(&mut self, latency: Micros) -> bool {
        self.burst_open = false;
        self.segment_latency += latency.as_u64();
        self.segment_requests += 1;
        self.since_training += 1;
        self.since_training >= self.params.training_interval.max(1)
    }

    pub fn train(&mut self, current: AgentState) {
        self.since_training = 0;
        self.close_burst(current);
        for (d, r, next) in std::mem::take(&mut self.ready) {
            update_q(&mut self.table, d.state, d.action, r, next, self.params.alpha, self.params.gamma);
            self.updates += 1;
        }
    }
}

/// Adapter that lets a [`QAgent`] drive [`Ftl::maybe_trigger_space_mgmt`].
pub struct AgentManager<'a> {
    pub agent: &'a mut QAgent,
    pub write_rate: f64,
    pub hot_write_fraction: f64,
}

impl AgentManager<'_> {
    pub fn inputs(&self, ftl: &Ftl) -> StateInputs {
        StateInputs {
            slc_free_fraction: ftl.free_fraction(CellMode::Slc),
            qlc_free_fraction: ftl.free_fraction(CellMode::Qlc),
            write_rate: self.write_rate,
            hot_write_fraction: self.hot_write_fraction,
        }
    }
}

impl SpaceManager for AgentManager<'_> {
    fn decide(&mut self, ftl: &Ftl, eligible: &[ActionKind]) -> ActionKind {
        let state = observe_state(&self.inputs(ftl), &self.agent.calibrator);
        self.agent.decide(state, eligible)
    }
}
