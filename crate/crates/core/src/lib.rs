//! Trace-driven hybrid SLC/QLC SSD simulator with hotness classification,
//! a Q-learning space manager, a workload monitor, and a tuning loop that
//! asks a language model for new configuration profiles and verifies them.

pub mod config;
pub mod ftl;
pub mod harness;
pub mod hotness;
pub mod monitor;
pub mod rl;
pub mod sim;
pub mod ssd;
pub mod trace;
pub mod tuner;
pub mod units;
pub mod verify;

pub use config::{ConfigProfile, Param, ParamBounds};
pub use ftl::{ActionKind, Ftl, PlacementPolicy, SpaceAction};
pub use harness::{replay, ReplayOptions, RunReport};
pub use sim::{SimSetup, Simulator};
pub use ssd::{CellMode, FlashGeometry, LatencyModel, SsdState};
pub use trace::{IoKind, TraceRecord};
pub use tuner::{AutoTuner, TuningRecord, Verdict};
pub use units::Micros;
