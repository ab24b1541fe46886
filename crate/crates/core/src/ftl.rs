//! Host-managed flash translation layer on top of [`SsdState`].
//!
//! Placement stripes pages round-robin over channels, with one open block per
//! channel per region. Each region keeps one erased block in reserve so that
//! garbage collection always has somewhere to migrate into; host writes may
//! never take the last free block of a region.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hotness::Hotness;
use crate::ssd::{CellMode, FlashGeometry, LatencyModel, Lpn, OpOrigin, PageState, Ppn, SsdError, SsdState};
use crate::units::Micros;

/// Erased blocks per region that only garbage collection may consume.
const GC_RESERVE_BLOCKS: u32 = 1;
/// Upper bound on back-to-back emergency collections for a single page.
const EMERGENCY_GC_LIMIT: u32 = 16;
/// Default cap on consecutive space-management actions per trigger.
pub const DEFAULT_ACTION_BOUND: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlacementPolicy {
    SlcFirst,
    HotnessBased,
}

impl PlacementPolicy {
    pub fn preferred(self, hotness: Hotness) -> CellMode {
        match (self, hotness) {
            (PlacementPolicy::SlcFirst, _) | (PlacementPolicy::HotnessBased, Hotness::Hot) => {
                CellMode::Slc
            }
            (PlacementPolicy::HotnessBased, Hotness::Cold) => CellMode::Qlc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    SlcInternalGc,
    QlcInternalGc,
    SlcToQlcGc,
    SlcToQlcMc,
    Idle,
}

impl ActionKind {
    /// Fixed order, also used to break argmax ties.
    pub const ALL: [ActionKind; 5] = [
        ActionKind::SlcInternalGc,
        ActionKind::QlcInternalGc,
        ActionKind::SlcToQlcGc,
        ActionKind::SlcToQlcMc,
        ActionKind::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceAction {
    pub kind: ActionKind,
    /// Blocks to process; zero only for `Idle`.
    pub granularity: u32,
}

impl SpaceAction {
    pub fn new(kind: ActionKind, granularity: u32) -> Self {
        let granularity = match kind {
            ActionKind::Idle => 0,
            _ => granularity.max(1),
        };
        SpaceAction { kind, granularity }
    }

    pub fn idle() -> Self {
        SpaceAction::new(ActionKind::Idle, 0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaCounters {
    pub host_pages_written: u64,
    pub device_pages_written: u64,
}

impl WaCounters {
    pub fn coefficient(&self) -> Option<f64> {
        (self.host_pages_written > 0)
            .then(|| self.device_pages_written as f64 / self.host_pages_written as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub pages_migrated: u64,
    pub blocks_reclaimed: u64,
    pub blocks_converted: u64,
    pub latency: Micros,
}

impl ActionOutcome {
    pub fn is_effective(&self) -> bool {
        self.blocks_reclaimed > 0 || self.blocks_converted > 0
    }

    fn absorb(&mut self, other: ActionOutcome) {
        self.pages_migrated += other.pages_migrated;
        self.blocks_reclaimed += other.blocks_reclaimed;
        self.blocks_converted += other.blocks_converted;
        self.latency += other.latency;
    }
}

/// Event counters surfaced in run reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtlCounters {
    /// Victim blocks reclaimed by any collection, foreground or agent driven.
    pub gc_count: u64,
    /// Blocks converted SLC to QLC.
    pub mc_count: u64,
    pub emergency_gc_count: u64,
    pub unmapped_reads: u64,
    pub rejected_requests: u64,
    pub capacity_warnings: u64,
    pub agent_actions: u64,
}

/// Trigger settings taken from the active configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceThresholds {
    /// Percent of free blocks in a region below which management runs.
    pub gc_trigger_pct: f64,
    /// Percent of free SLC blocks below which conversion becomes eligible.
    pub conversion_trigger_pct: f64,
    pub gc_granularity: u32,
    pub conversion_granularity: u32,
    pub action_bound: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStatus {
    pub mode: CellMode,
    pub blocks: u32,
    pub free_blocks: u32,
    pub valid_pages: u64,
    pub raw_pages: u64,
}

impl RegionStatus {
    /// Fraction of the region's blocks that are erased and not open. A region
    /// without blocks reports 1.0 so it never looks under pressure.
    pub fn free_fraction(&self) -> f64 {
        if self.blocks == 0 {
            1.0
        } else {
            self.free_blocks as f64 / self.blocks as f64
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FtlError {
    #[error("request lpn {lpn}+{pages} exceeds logical capacity {capacity}")]
    LpnOutOfRange { lpn: Lpn, pages: u64, capacity: u64 },
    #[error("device full: no space in either region even after garbage collection")]
    CapacityExhausted,
    #[error(transparent)]
    Device(#[from] SsdError),
}

/// Chooses space-management actions when a region runs low on free blocks.
pub trait SpaceManager {
    fn decide(&mut self, ftl: &Ftl, eligible: &[ActionKind]) -> ActionKind;
}

/// Always answers with the same action; handy for tests and baselines.
#[derive(Debug, Clone, Copy)]
pub struct FixedManager(pub ActionKind);

impl SpaceManager for FixedManager {
    fn decide(&mut self, _ftl: &Ftl, eligible: &[ActionKind]) -> ActionKind {
        if eligible.contains(&self.0) {
            self.0
        } else {
            ActionKind::Idle
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VictimRule {
    /// Internal GC: the block must hold at least one invalid page.
    NeedsInvalid,
    /// Eviction to QLC: any closed block with programmed pages.
    AnyWritten,
}

fn mi(mode: CellMode) -> usize {
    match mode {
        CellMode::Slc => 0,
        CellMode::Qlc => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ftl {
    ssd: SsdState,
    policy: PlacementPolicy,
    host_pages_written: u64,
    counters: FtlCounters,
    /// Erased, unopened blocks per region per channel.
    free: [Vec<BTreeSet<u32>>; 2],
    free_count: [u32; 2],
    region_blocks: [u32; 2],
    open: [Vec<Option<u32>>; 2],
    cursor: [u32; 2],
    next_tag: u64,
}

impl Ftl {
    pub fn new(ssd: SsdState, policy: PlacementPolicy) -> Self {
        let channels = ssd.geometry().channels as usize;
        let mut free = [vec![BTreeSet::new(); channels], vec![BTreeSet::new(); channels]];
        let mut free_count = [0u32; 2];
        let mut region_blocks = [0u32; 2];
        for (id, block) in ssd.blocks().iter().enumerate() {
            let m = mi(block.mode);
            region_blocks[m] += 1;
            if block.is_erased() {
                free[m][ssd.geometry().channel_of(id as u32) as usize].insert(id as u32);
                free_count[m] += 1;
            }
        }
        Ftl {
            ssd,
            policy,
            host_pages_written: 0,
            counters: FtlCounters::default(),
            free,
            free_count,
            region_blocks,
            open: [vec![None; channels], vec![None; channels]],
            cursor: [0; 2],
            next_tag: 0,
        }
    }

    pub fn build(
        geometry: FlashGeometry,
        latency: LatencyModel,
        initial_mode_split: f64,
        policy: PlacementPolicy,
    ) -> Result<Self, SsdError> {
        let ssd = SsdState::new(geometry, latency, initial_mode_split)?;
        // Every region keeps a reserve block back from the host. If the host
        // could fill everything else with distinct pages, no garbage would be
        // left to collect and allocation would deadlock.
        let g = ssd.geometry();
        let slc = g.slc_block_count(initial_mode_split);
        let reserve: u64 = [(CellMode::Slc, slc), (CellMode::Qlc, g.total_blocks() - slc)]
            .into_iter()
            .filter(|&(_, blocks)| blocks > 0)
            .map(|(mode, _)| GC_RESERVE_BLOCKS as u64 * g.pages_per_block(mode) as u64)
            .sum();
        let usable = g.raw_pages(slc).saturating_sub(reserve);
        if ssd.logical_pages() > usable {
            return Err(SsdError::InvalidGeometry(format!(
                "{} logical pages exceed the {usable} left after reserve blocks; raise over-provisioning",
                ssd.logical_pages()
            )));
        }
        Ok(Ftl::new(ssd, policy))
    }

    pub fn ssd(&self) -> &SsdState {
        &self.ssd
    }

    pub fn ssd_mut(&mut self) -> &mut SsdState {
        &mut self.ssd
    }

    pub fn policy(&self) -> PlacementPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: PlacementPolicy) {
        self.policy = policy;
    }

    pub fn counters(&self) -> &FtlCounters {
        &self.counters
    }

    pub fn count_rejected(&mut self) {
        self.counters.rejected_requests += 1;
    }

    pub fn logical_pages(&self) -> u64 {
        self.ssd.logical_pages()
    }

    pub fn wa_counters(&self) -> WaCounters {
        WaCounters {
            host_pages_written: self.host_pages_written,
            device_pages_written: self.ssd.device_pages_written(),
        }
    }

    /// Device pages written per host page; `None` before any host write.
    pub fn wa_coefficient(&self) -> Option<f64> {
        self.wa_counters().coefficient()
    }

    /// Payload tag most recently written to `lpn` (host write sequence number).
    pub fn read_tag(&self, lpn: Lpn) -> Option<u64> {
        self.ssd.tag_of(lpn)
    }

    pub fn region(&self, mode: CellMode) -> RegionStatus {
        let m = mi(mode);
        let (valid, raw) = self
            .ssd
            .blocks()
            .iter()
            .filter(|b| b.mode == mode)
            .fold((0u64, 0u64), |(v, r), b| {
                (v + b.valid_pages() as u64, r + b.page_count() as u64)
            });
        RegionStatus {
            mode,
            blocks: self.region_blocks[m],
            free_blocks: self.free_count[m],
            valid_pages: valid,
            raw_pages: raw,
        }
    }

    /// Cheap variant of [`Ftl::region`] without page totals.
    pub fn free_fraction(&self, mode: CellMode) -> f64 {
        let m = mi(mode);
        RegionStatus {
            mode,
            blocks: self.region_blocks[m],
            free_blocks: self.free_count[m],
            valid_pages: 0,
            raw_pages: 0,
        }
        .free_fraction()
    }

    pub fn region_blocks(&self, mode: CellMode) -> u32 {
        self.region_blocks[mi(mode)]
    }

    pub fn free_blocks(&self, mode: CellMode) -> u32 {
        self.free_count[mi(mode)]
    }

    fn take_free_block(&mut self, mode: CellMode, channel: usize) -> Option<u32> {
        let m = mi(mode);
        let id = self.free[m][channel].pop_first()?;
        self.free_count[m] -= 1;
        Some(id)
    }

    fn return_free_block(&mut self, id: u32) {
        let block = &self.ssd.blocks()[id as usize];
        let m = mi(block.mode);
        let ch = self.ssd.geometry().channel_of(id) as usize;
        if self.free[m][ch].insert(id) {
            self.free_count[m] += 1;
        }
    }

    fn is_open(&self, id: u32) -> bool {
        let mode = self.ssd.blocks()[id as usize].mode;
        let ch = self.ssd.geometry().channel_of(id) as usize;
        self.open[mi(mode)][ch] == Some(id)
    }

    /// Pages that can still be programmed in a region without erasing.
    fn writable_pages(&self, mode: CellMode) -> u64 {
        let m = mi(mode);
        let open: u64 = self.open[m]
            .iter()
            .flatten()
            .map(|&b| self.ssd.blocks()[b as usize].free_pages() as u64)
            .sum();
        open + self.free_count[m] as u64 * self.ssd.geometry().pages_per_block(mode) as u64
    }

    /// Next programmable page in `mode`, walking channels round-robin. With
    /// `keep_reserve` the region's reserve block is left alone.
    fn allocate(&mut self, mode: CellMode, keep_reserve: bool) -> Option<Ppn> {
        let m = mi(mode);
        let channels = self.open[m].len();
        let start = self.cursor[m] as usize;
        for i in 0..channels {
            let ch = (start + i) % channels;
            let block = match self.open[m][ch] {
                Some(b) => b,
                None => {
                    let floor = if keep_reserve { GC_RESERVE_BLOCKS } else { 0 };
                    if self.free_count[m] <= floor {
                        continue;
                    }
                    match self.take_free_block(mode, ch) {
                        Some(b) => {
                            self.open[m][ch] = Some(b);
                            b
                        }
                        None => continue,
                    }
                }
            };
            let state = &self.ssd.blocks()[block as usize];
            let ppn = Ppn::new(block, state.write_pointer());
            if state.write_pointer() + 1 == state.page_count() {
                self.open[m][ch] = None;
            }
            self.cursor[m] = ((ch + 1) % channels) as u32;
            return Some(ppn);
        }
        None
    }

    fn place_host_page(&mut self, preferred: CellMode) -> Result<(Ppn, Micros), FtlError> {
        let order = [preferred, preferred.other()];
        for mode in order {
            if let Some(ppn) = self.allocate(mode, true) {
                return Ok((ppn, Micros::ZERO));
            }
        }
        let mut mgmt = Micros::ZERO;
        for mode in order {
            if self.region_blocks[mi(mode)] == 0 {
                continue;
            }
            mgmt += self.emergency_gc(mode)?;
            if let Some(ppn) = self.allocate(mode, true) {
                return Ok((ppn, mgmt));
            }
        }
        Err(FtlError::CapacityExhausted)
    }

    /// Greedy in-region collection until host allocation is possible again.
    fn emergency_gc(&mut self, mode: CellMode) -> Result<Micros, FtlError> {
        let mut spent = Micros::ZERO;
        for _ in 0..EMERGENCY_GC_LIMIT {
            if self.free_count[mi(mode)] > GC_RESERVE_BLOCKS {
                break;
            }
            let outcome = self.collect_one(mode, mode, VictimRule::NeedsInvalid)?;
            if outcome.blocks_reclaimed == 0 {
                break;
            }
            self.counters.emergency_gc_count += 1;
            spent += outcome.latency;
        }
        Ok(spent)
    }

    /// Services a host write of `n_pages` starting at `lpn`. The latency is
    /// the busiest channel's time plus any emergency collection, which runs
    /// serially in the foreground.
    pub fn handle_write(&mut self, lpn: Lpn, n_pages: u64, hotness: Hotness) -> Result<Micros, FtlError> {
        let capacity = self.logical_pages();
        if lpn.checked_add(n_pages).is_none_or(|end| end > capacity) {
            self.counters.rejected_requests += 1;
            return Err(FtlError::LpnOutOfRange {
                lpn,
                pages: n_pages,
                capacity,
            });
        }
        let preferred = self.policy.preferred(hotness);
        let mut busy = vec![Micros::ZERO; self.ssd.geometry().channels as usize];
        let mut mgmt = Micros::ZERO;
        for page in lpn..lpn + n_pages {
            self.ssd.invalidate_lpn(page);
            let (ppn, gc) = self.place_host_page(preferred)?;
            mgmt += gc;
            self.ssd.set_origin(OpOrigin::Host);
            let tag = self.next_tag;
            self.next_tag += 1;
            let cost = self.ssd.program_page(ppn, page, tag)?;
            busy[self.ssd.geometry().channel_of(ppn.block) as usize] += cost;
        }
        self.host_pages_written += n_pages;
        Ok(busy.into_iter().max().unwrap_or_default() + mgmt)
    }

    /// Services a host read. Unmapped pages cost nothing and are counted.
    pub fn handle_read(&mut self, lpn: Lpn, n_pages: u64) -> Micros {
        let mut busy = vec![Micros::ZERO; self.ssd.geometry().channels as usize];
        self.ssd.set_origin(OpOrigin::Host);
        for page in lpn..lpn.saturating_add(n_pages) {
            match self.ssd.lookup(page) {
                Some(ppn) => {
                    let cost = self
                        .ssd
                        .read_page(ppn)
                        .expect("mapping points at a valid page");
                    busy[self.ssd.geometry().channel_of(ppn.block) as usize] += cost;
                }
                None => self.counters.unmapped_reads += 1,
            }
        }
        busy.into_iter().max().unwrap_or_default()
    }

    /// Greedy victim in `region`: fewest valid pages, then lowest erase count,
    /// then lowest block id. Open blocks are never chosen.
    pub fn select_victim(&self, region: CellMode) -> Option<u32> {
        self.victim(region, VictimRule::NeedsInvalid)
    }

    fn victim(&self, region: CellMode, rule: VictimRule) -> Option<u32> {
        self.ssd
            .blocks()
            .iter()
            .enumerate()
            .filter(|(id, b)| {
                b.mode == region
                    && !self.is_open(*id as u32)
                    && match rule {
                        VictimRule::NeedsInvalid => b.invalid_pages() > 0,
                        VictimRule::AnyWritten => !b.is_erased(),
                    }
            })
            .min_by_key(|(id, b)| (b.valid_pages(), b.erase_count, *id))
            .map(|(id, _)| id as u32)
    }

    /// Moves every valid page of one victim into `dest` and erases it. Returns
    /// a zero outcome when no victim exists or `dest` lacks room.
    fn collect_one(
        &mut self,
        region: CellMode,
        dest: CellMode,
        rule: VictimRule,
    ) -> Result<ActionOutcome, FtlError> {
        let Some(victim) = self.victim(region, rule) else {
            return Ok(ActionOutcome::default());
        };
        let live: Vec<(u32, Lpn, u64)> = self.ssd.blocks()[victim as usize]
            .pages()
            .iter()
            .enumerate()
            .filter_map(|(p, s)| match *s {
                PageState::Valid { lpn, tag } => Some((p as u32, lpn, tag)),
                _ => None,
            })
            .collect();
        // Moves into the other region must leave its reserve block for that
        // region's own emergency collection.
        let cross = dest != region;
        let mut room = self.writable_pages(dest);
        if cross {
            let reserve = GC_RESERVE_BLOCKS.min(self.free_count[mi(dest)]) as u64;
            room -= reserve * self.ssd.geometry().pages_per_block(dest) as u64;
        }
        if (live.len() as u64) > room {
            return Ok(ActionOutcome::default());
        }
        self.ssd.set_origin(OpOrigin::Management);
        let mut out = ActionOutcome::default();
        for (page, lpn, tag) in live {
            out.latency += self.ssd.read_page(Ppn::new(victim, page))?;
            let target = self
                .allocate(dest, cross)
                .expect("room checked before migration");
            out.latency += self.ssd.program_page(target, lpn, tag)?;
            out.pages_migrated += 1;
        }
        out.latency += self.ssd.erase_block(victim)?;
        self.ssd.set_origin(OpOrigin::Host);
        self.return_free_block(victim);
        out.blocks_reclaimed = 1;
        self.counters.gc_count += 1;
        Ok(out)
    }

    fn convert_one(&mut self) -> Result<ActionOutcome, FtlError> {
        let mut out = ActionOutcome::default();
        if self.free_count[mi(CellMode::Slc)] <= GC_RESERVE_BLOCKS {
            out.absorb(self.collect_one(CellMode::Slc, CellMode::Slc, VictimRule::NeedsInvalid)?);
        }
        if self.free_count[mi(CellMode::Slc)] <= GC_RESERVE_BLOCKS {
            return Ok(out);
        }
        let channels = self.open[0].len();
        let Some(id) = (0..channels).find_map(|ch| self.take_free_block(CellMode::Slc, ch)) else {
            return Ok(out);
        };
        self.ssd.convert_block_mode(id, CellMode::Qlc)?;
        self.region_blocks[0] -= 1;
        self.region_blocks[1] += 1;
        self.return_free_block(id);
        self.counters.mc_count += 1;
        out.blocks_converted += 1;
        Ok(out)
    }

    /// Runs one space-management action. Actions whose preconditions do not
    /// hold come back as a zero outcome rather than an error.
    pub fn execute_action(&mut self, action: SpaceAction) -> Result<ActionOutcome, FtlError> {
        let mut total = ActionOutcome::default();
        for _ in 0..action.granularity {
            let step = match action.kind {
                ActionKind::SlcInternalGc => {
                    self.collect_one(CellMode::Slc, CellMode::Slc, VictimRule::NeedsInvalid)?
                }
                ActionKind::QlcInternalGc => {
                    self.collect_one(CellMode::Qlc, CellMode::Qlc, VictimRule::NeedsInvalid)?
                }
                ActionKind::SlcToQlcGc => {
                    self.collect_one(CellMode::Slc, CellMode::Qlc, VictimRule::AnyWritten)?
                }
                ActionKind::SlcToQlcMc => self.convert_one()?,
                ActionKind::Idle => ActionOutcome::default(),
            };
            let effective = step.is_effective();
            total.absorb(step);
            if !effective {
                break;
            }
        }
        Ok(total)
    }

    /// True when either region has fewer free blocks than the trigger allows.
    pub fn under_pressure(&self, thresholds: &SpaceThresholds) -> bool {
        [CellMode::Slc, CellMode::Qlc]
            .into_iter()
            .any(|m| self.free_fraction(m) * 100.0 < thresholds.gc_trigger_pct)
    }

    /// Actions the manager may pick right now. Conversion only becomes
    /// eligible once SLC free space drops below its own trigger.
    pub fn eligible_actions(&self, thresholds: &SpaceThresholds) -> Vec<ActionKind> {
        let mc = self.free_fraction(CellMode::Slc) * 100.0 < thresholds.conversion_trigger_pct;
        ActionKind::ALL
            .into_iter()
            .filter(|k| *k != ActionKind::SlcToQlcMc || mc)
            .collect()
    }

    /// Consults `manager` while a region is under pressure, up to the action
    /// bound. Returns the added foreground latency.
    pub fn maybe_trigger_space_mgmt(
        &mut self,
        thresholds: &SpaceThresholds,
        manager: &mut dyn SpaceManager,
    ) -> Result<Micros, FtlError> {
        let mut added = Micros::ZERO;
        let mut steps = 0u32;
        while self.under_pressure(thresholds) {
            if steps >= thresholds.action_bound {
                self.counters.capacity_warnings += 1;
                log::debug!("space management hit the {} action bound", thresholds.action_bound);
                break;
            }
            let eligible = self.eligible_actions(thresholds);
            let kind = manager.decide(self, &eligible);
            if kind == ActionKind::Idle {
                break;
            }
            let granularity = match kind {
                ActionKind::SlcToQlcMc => thresholds.conversion_granularity,
                _ => thresholds.gc_granularity,
            };
            let outcome = self.execute_action(SpaceAction::new(kind, granularity))?;
            self.counters.agent_actions += 1;
            added += outcome.latency;
            steps += 1;
        }
        Ok(added)
    }

    /// Per-mode block and page accounting check, on top of [`SsdState::audit`].
    pub fn audit(&self) -> Result<(), String> {
        self.ssd.audit()?;
        for mode in [CellMode::Slc, CellMode::Qlc] {
            let m = mi(mode);
            let blocks = self.ssd.blocks_in_mode(mode);
            if blocks != self.region_blocks[m] {
                return Err(format!("{mode:?}: {} blocks tracked, {blocks} present", self.region_blocks[m]));
            }
            let free: u32 = self.free[m].iter().map(|s| s.len() as u32).sum();
            if free != self.free_count[m] {
                return Err(format!("{mode:?}: free count out of sync"));
            }
            for set in &self.free[m] {
                for &id in set {
                    let b = &self.ssd.blocks()[id as usize];
                    if !b.is_erased() || b.mode != mode {
                        return Err(format!("block {id} listed free but is not an erased {mode:?} block"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(split: f64, policy: PlacementPolicy) -> Ftl {
        // Mixed layouts need room for a reserve block in each region.
        let op = if split < 1.0 { 0.5 } else { 0.25 };
        Ftl::build(
            FlashGeometry::new(1, 4, 4, 4096, op),
            LatencyModel::default(),
            split,
            policy,
        )
        .unwrap()
    }

    fn thresholds(gc: f64) -> SpaceThresholds {
        SpaceThresholds {
            gc_trigger_pct: gc,
            conversion_trigger_pct: 6.0,
            gc_granularity: 1,
            conversion_granularity: 1,
            action_bound: DEFAULT_ACTION_BOUND,
        }
    }

    #[test]
    fn overcommitted_geometry_is_rejected() {
        let err = Ftl::build(FlashGeometry::new(1, 8, 8, 4096, 0.125), LatencyModel::default(), 0.5, PlacementPolicy::SlcFirst);
        assert!(matches!(err, Err(SsdError::InvalidGeometry(_))));
        assert!(Ftl::build(FlashGeometry::new(1, 8, 8, 4096, 0.25), LatencyModel::default(), 0.5, PlacementPolicy::SlcFirst).is_ok());
    }

    #[test]
    fn slc_first_lands_in_slc() {
        let mut ftl = Ftl::build(
            FlashGeometry::new(4, 4, 4, 4096, 0.125),
            LatencyModel::default(),
            0.5,
            PlacementPolicy::SlcFirst,
        )
        .unwrap();
        // Four pages stripe over four channels.
        let lat = ftl.handle_write(0, 4, Hotness::Cold).unwrap();
        assert_eq!(lat, Micros(200));
        for lpn in 0..4 {
            let ppn = ftl.ssd().lookup(lpn).unwrap();
            assert_eq!(ftl.ssd().blocks()[ppn.block as usize].mode, CellMode::Slc);
        }
        assert_eq!(ftl.handle_read(0, 4), Micros(20));
        assert_eq!(ftl.handle_read(0, 1), Micros(20));
        ftl.audit().unwrap();
    }

    #[test]
    fn single_channel_write_is_serial() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        assert_eq!(ftl.handle_write(0, 3, Hotness::Hot).unwrap(), Micros(600));
        assert_eq!(ftl.handle_read(0, 3), Micros(60));
    }

    #[test]
    fn hotness_based_routes_cold_to_qlc() {
        let mut ftl = tiny(0.5, PlacementPolicy::HotnessBased);
        ftl.handle_write(0, 1, Hotness::Cold).unwrap();
        ftl.handle_write(1, 1, Hotness::Hot).unwrap();
        let mode = |ftl: &Ftl, lpn| ftl.ssd().blocks()[ftl.ssd().lookup(lpn).unwrap().block as usize].mode;
        assert_eq!(mode(&ftl, 0), CellMode::Qlc);
        assert_eq!(mode(&ftl, 1), CellMode::Slc);
    }

    #[test]
    fn overwrite_leaves_one_copy() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(5, 1, Hotness::Hot).unwrap();
        ftl.handle_write(5, 1, Hotness::Hot).unwrap();
        assert_eq!(ftl.ssd().mapping().live(), 1);
        assert_eq!(ftl.read_tag(5), Some(1));
        ftl.audit().unwrap();
    }

    #[test]
    fn unmapped_read_is_free() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        assert_eq!(ftl.handle_read(3, 1), Micros::ZERO);
        assert_eq!(ftl.counters().unmapped_reads, 1);
    }

    #[test]
    fn out_of_range_write_rejected() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        let cap = ftl.logical_pages();
        assert!(matches!(
            ftl.handle_write(cap - 1, 2, Hotness::Hot),
            Err(FtlError::LpnOutOfRange { .. })
        ));
        assert_eq!(ftl.counters().rejected_requests, 1);
    }

    #[test]
    fn victim_is_greedy_minimum() {
        // Blocks 0..2 filled, then lpns invalidated so valid counts are [3, 0, 2].
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 12, Hotness::Hot).unwrap();
        for lpn in [0, 4, 5, 6, 7, 8, 9] {
            ftl.ssd_mut().invalidate_lpn(lpn);
        }
        assert_eq!(ftl.select_victim(CellMode::Slc), Some(1));
    }

    #[test]
    fn victim_tie_prefers_lower_erase_count() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 4, Hotness::Hot).unwrap();
        for lpn in 0..4 {
            ftl.ssd_mut().invalidate_lpn(lpn);
        }
        // Cycle block 0 once so its erase count rises.
        ftl.execute_action(SpaceAction::new(ActionKind::SlcInternalGc, 1)).unwrap();
        assert_eq!(ftl.ssd().blocks()[0].erase_count, 1);
        // Block 0 is reused first (lowest id), then blocks 1 and 2.
        ftl.handle_write(0, 12, Hotness::Hot).unwrap();
        let placed: Vec<u32> = (0..12).step_by(4).map(|l| ftl.ssd().lookup(l).unwrap().block).collect();
        assert_eq!(placed, vec![0, 1, 2]);
        for lpn in [0, 4, 8] {
            ftl.ssd_mut().invalidate_lpn(lpn);
        }
        // Three valid pages each; block 0 has the higher erase count.
        assert_eq!(ftl.select_victim(CellMode::Slc), Some(1));
    }

    #[test]
    fn no_victim_when_all_valid() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 12, Hotness::Hot).unwrap();
        assert_eq!(ftl.select_victim(CellMode::Slc), None);
    }

    #[test]
    fn internal_gc_cost_and_counts() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 4, Hotness::Hot).unwrap();
        ftl.ssd_mut().invalidate_lpn(0);
        ftl.ssd_mut().invalidate_lpn(1);
        let device_before = ftl.wa_counters().device_pages_written;
        let out = ftl
            .execute_action(SpaceAction::new(ActionKind::SlcInternalGc, 1))
            .unwrap();
        assert_eq!(out.pages_migrated, 2);
        assert_eq!(out.blocks_reclaimed, 1);
        assert_eq!(out.latency, Micros(2 * (20 + 200) + 3000));
        assert_eq!(ftl.wa_counters().device_pages_written, device_before + 2);
        assert_eq!(ftl.wa_counters().host_pages_written, 4);
        assert_eq!(ftl.read_tag(2), Some(2));
        assert_eq!(ftl.read_tag(3), Some(3));
        ftl.audit().unwrap();
    }

    #[test]
    fn idle_changes_nothing() {
        let mut ftl = tiny(0.5, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 3, Hotness::Hot).unwrap();
        let before = ftl.clone();
        let out = ftl.execute_action(SpaceAction::idle()).unwrap();
        assert_eq!(out, ActionOutcome::default());
        assert_eq!(ftl, before);
    }

    #[test]
    fn conversion_moves_one_block() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        let out = ftl
            .execute_action(SpaceAction::new(ActionKind::SlcToQlcMc, 1))
            .unwrap();
        assert_eq!(out.blocks_converted, 1);
        assert_eq!(out.latency, Micros::ZERO);
        assert_eq!(ftl.region_blocks(CellMode::Slc), 3);
        assert_eq!(ftl.region_blocks(CellMode::Qlc), 1);
        ftl.audit().unwrap();
    }

    #[test]
    fn slc_to_qlc_gc_evicts_valid_data() {
        let mut ftl = tiny(0.5, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 4, Hotness::Hot).unwrap();
        let out = ftl
            .execute_action(SpaceAction::new(ActionKind::SlcToQlcGc, 1))
            .unwrap();
        assert_eq!(out.pages_migrated, 4);
        assert_eq!(out.latency, Micros(4 * (20 + 2000) + 3000));
        for lpn in 0..4 {
            let b = ftl.ssd().lookup(lpn).unwrap().block;
            assert_eq!(ftl.ssd().blocks()[b as usize].mode, CellMode::Qlc);
        }
        ftl.audit().unwrap();
    }

    #[test]
    fn ineffective_action_is_not_an_error() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        let out = ftl
            .execute_action(SpaceAction::new(ActionKind::QlcInternalGc, 2))
            .unwrap();
        assert_eq!(out, ActionOutcome::default());
    }

    #[test]
    fn wa_undefined_then_one() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        assert_eq!(ftl.wa_coefficient(), None);
        ftl.handle_write(0, 10, Hotness::Hot).unwrap();
        assert_eq!(ftl.wa_coefficient(), Some(1.0));
    }

    #[test]
    fn hand_traced_overwrite_wa() {
        // 4 blocks x 4 pages, 12 logical pages. Fill, then overwrite lpn 0..3.
        // Each overwrite finds only the reserve block free and collects a
        // victim holding 3 valid pages first.
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        assert_eq!(ftl.logical_pages(), 12);
        ftl.handle_write(0, 12, Hotness::Hot).unwrap();
        for lpn in 0..4 {
            ftl.handle_write(lpn, 1, Hotness::Hot).unwrap();
        }
        assert_eq!(ftl.wa_counters().host_pages_written, 16);
        assert_eq!(ftl.wa_counters().device_pages_written, 28);
        assert_eq!(ftl.wa_coefficient(), Some(1.75));
        ftl.audit().unwrap();
    }

    #[test]
    fn trigger_respects_threshold() {
        let mut ftl = Ftl::build(
            FlashGeometry::new(1, 20, 4, 4096, 0.25),
            LatencyModel::default(),
            1.0,
            PlacementPolicy::SlcFirst,
        )
        .unwrap();
        // 20 blocks; write 16 pages into 4 blocks leaves 16 free = 80%.
        ftl.handle_write(0, 16, Hotness::Hot).unwrap();
        let mut m = FixedManager(ActionKind::SlcInternalGc);
        assert_eq!(ftl.maybe_trigger_space_mgmt(&thresholds(6.0), &mut m).unwrap(), Micros::ZERO);
        assert_eq!(ftl.counters().agent_actions, 0);
        // Raising the trigger above the free fraction consults the manager.
        ftl.maybe_trigger_space_mgmt(&thresholds(90.0), &mut m).unwrap();
        assert!(ftl.counters().agent_actions > 0);
    }

    #[test]
    fn mc_only_eligible_under_conversion_trigger() {
        let ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        let t = thresholds(6.0);
        assert!(!ftl.eligible_actions(&t).contains(&ActionKind::SlcToQlcMc));
        let t = SpaceThresholds { conversion_trigger_pct: 150.0, ..t };
        assert!(ftl.eligible_actions(&t).contains(&ActionKind::SlcToQlcMc));
    }

    #[test]
    fn action_bound_raises_warning() {
        let mut ftl = tiny(1.0, PlacementPolicy::SlcFirst);
        ftl.handle_write(0, 12, Hotness::Hot).unwrap();
        // Nothing is reclaimable and the trigger can never be satisfied.
        let mut m = FixedManager(ActionKind::SlcInternalGc);
        let t = SpaceThresholds { action_bound: 5, ..thresholds(100.0) };
        ftl.maybe_trigger_space_mgmt(&t, &mut m).unwrap();
        assert_eq!(ftl.counters().capacity_warnings, 1);
        assert_eq!(ftl.counters().agent_actions, 5);
    }
}
