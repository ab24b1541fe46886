//! Physical model of a hybrid SLC/QLC flash device.
//!
//! The device is a flat array of blocks striped round-robin over channels
//! (block `b` lives on channel `b % channels`). Each block is in SLC or QLC
//! mode, pages inside a block are programmed strictly in order, and a block
//! can only change mode while fully erased. The logical-to-physical map lives
//! here too so that every mutation keeps it consistent with page states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::Micros;

/// Logical page number as seen by the host.
pub type Lpn = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellMode {
    Slc,
    Qlc,
}

impl CellMode {
    pub fn other(self) -> CellMode {
        match self {
            CellMode::Slc => CellMode::Qlc,
            CellMode::Qlc => CellMode::Slc,
        }
    }
}

/// Physical page address: block id plus page offset within that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ppn {
    pub block: u32,
    pub page: u32,
}

impl Ppn {
    pub fn new(block: u32, page: u32) -> Self {
        Ppn { block, page }
    }
}

impl std::fmt::Display for Ppn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.block, self.page)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SsdError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid latency model: {0}")]
    InvalidLatency(String),
    #[error("block {0} does not exist")]
    NoSuchBlock(u32),
    #[error("page {0} does not exist")]
    NoSuchPage(Ppn),
    #[error("lpn {lpn} outside logical capacity of {capacity} pages")]
    LpnOutOfRange { lpn: Lpn, capacity: u64 },
    #[error("page {0} is not free")]
    ProgramNonFree(Ppn),
    #[error("out-of-order program at {ppn}, write pointer is at page {expected}")]
    ProgramOutOfOrder { ppn: Ppn, expected: u32 },
    #[error("mapping corruption: read of non-valid page {0}")]
    MappingCorruption(Ppn),
    #[error("block {block} still holds {valid} valid pages")]
    EraseWithValidPages { block: u32, valid: u32 },
    #[error("block {0} is not fully erased")]
    ConvertNonEmpty(u32),
    #[error("block {0} is already in the requested mode")]
    SameMode(u32),
}

/// Channel/block/page layout of the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashGeometry {
    pub channels: u32,
    pub blocks_per_channel: u32,
    pub pages_per_block_slc: u32,
    pub pages_per_block_qlc: u32,
    /// Bytes per page.
    pub page_size: u64,
    /// Fraction of raw capacity hidden from the host.
    pub op_ratio: f64,
}

impl FlashGeometry {
    /// QLC holds four bits per cell against SLC's one.
    pub const QLC_DENSITY: u32 = 4;

    /// Full-size device: 32 channels, 16KB pages, 256/1024 pages per block,
    /// 12.5% over-provisioning, 256GB of raw QLC capacity.
    pub fn full_scale() -> Self {
        let page_size = 16 * 1024;
        let pages_per_block_qlc = 1024u64;
        let channels = 32u64;
        let raw = 256u64 << 30;
        let blocks_per_channel = raw / (page_size * pages_per_block_qlc * channels);
        FlashGeometry {
            channels: channels as u32,
            blocks_per_channel: blocks_per_channel as u32,
            pages_per_block_slc: 256,
            pages_per_block_qlc: pages_per_block_qlc as u32,
            page_size,
            op_ratio: 0.125,
        }
    }

    /// Geometry with the QLC page count derived from the SLC one.
    pub fn new(
        channels: u32,
        blocks_per_channel: u32,
        pages_per_block_slc: u32,
        page_size: u64,
        op_ratio: f64,
    ) -> Self {
        FlashGeometry {
            channels,
            blocks_per_channel,
            pages_per_block_slc,
            pages_per_block_qlc: pages_per_block_slc * Self::QLC_DENSITY,
            page_size,
            op_ratio,
        }
    }

    pub fn validate(&self) -> Result<(), SsdError> {
        let bad = |m: &str| Err(SsdError::InvalidGeometry(m.to_string()));
        if self.channels == 0 {
            return bad("zero channels");
        }
        if self.blocks_per_channel == 0 {
            return bad("zero blocks per channel");
        }
        if self.pages_per_block_slc == 0 {
            return bad("zero pages per block");
        }
        if self.page_size == 0 {
            return bad("zero page size");
        }
        if self.pages_per_block_qlc != Self::QLC_DENSITY * self.pages_per_block_slc {
            return bad("QLC pages per block must be 4x the SLC count");
        }
        if !(0.0..1.0).contains(&self.op_ratio) {
            return bad("over-provisioning ratio must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> u32 {
        self.channels * self.blocks_per_channel
    }

    pub fn pages_per_block(&self, mode: CellMode) -> u32 {
        match mode {
            CellMode::Slc => self.pages_per_block_slc,
            CellMode::Qlc => self.pages_per_block_qlc,
        }
    }

    pub fn channel_of(&self, block: u32) -> u32 {
        block % self.channels
    }

    pub fn block_bytes(&self, mode: CellMode) -> u64 {
        self.page_size * self.pages_per_block(mode) as u64
    }

    /// Number of blocks that start in SLC mode for a given split.
    pub fn slc_block_count(&self, initial_mode_split: f64) -> u32 {
        (self.total_blocks() as f64 * initial_mode_split).floor() as u32
    }

    /// Raw page count when `slc_blocks` blocks are SLC and the rest QLC.
    pub fn raw_pages(&self, slc_blocks: u32) -> u64 {
        let qlc_blocks = self.total_blocks() - slc_blocks;
        slc_blocks as u64 * self.pages_per_block_slc as u64
            + qlc_blocks as u64 * self.pages_per_block_qlc as u64
    }

    /// Host-visible capacity in pages for the given initial split.
    pub fn logical_pages(&self, initial_mode_split: f64) -> u64 {
        let raw = self.raw_pages(self.slc_block_count(initial_mode_split));
        (raw as f64 * (1.0 - self.op_ratio)).floor() as u64
    }
}

/// Per-operation service times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub read_slc: Micros,
    pub read_qlc: Micros,
    pub write_slc: Micros,
    pub write_qlc: Micros,
    pub erase_slc: Micros,
    pub erase_qlc: Micros,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            read_slc: Micros(20),
            read_qlc: Micros(140),
            write_slc: Micros(200),
            write_qlc: Micros(2000),
            erase_slc: Micros(3000),
            erase_qlc: Micros(3500),
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), SsdError> {
        let all = [
            self.read_slc,
            self.read_qlc,
            self.write_slc,
            self.write_qlc,
            self.erase_slc,
            self.erase_qlc,
        ];
        if all.iter().any(|d| d.0 == 0) {
            return Err(SsdError::InvalidLatency("durations must be positive".into()));
        }
        if self.write_qlc <= self.write_slc {
            return Err(SsdError::InvalidLatency("QLC writes must be slower than SLC".into()));
        }
        if self.read_qlc <= self.read_slc {
            return Err(SsdError::InvalidLatency("QLC reads must be slower than SLC".into()));
        }
        Ok(())
    }

    pub fn cost(&self, kind: OpKind, mode: CellMode) -> Micros {
        match (kind, mode) {
            (OpKind::Read, CellMode::Slc) => self.read_slc,
            (OpKind::Read, CellMode::Qlc) => self.read_qlc,
            (OpKind::Program, CellMode::Slc) => self.write_slc,
            (OpKind::Program, CellMode::Qlc) => self.write_qlc,
            (OpKind::Erase, CellMode::Slc) => self.erase_slc,
            (OpKind::Erase, CellMode::Qlc) => self.erase_qlc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageState {
    Free,
    /// Holds the current copy of `lpn`. `tag` is an opaque payload marker
    /// carried along by migrations.
    Valid { lpn: Lpn, tag: u64 },
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub mode: CellMode,
    pub erase_count: u64,
    pages: Vec<PageState>,
    write_pointer: u32,
    valid: u32,
    invalid: u32,
}

impl BlockState {
    fn new(mode: CellMode, pages: u32) -> Self {
        BlockState {
            mode,
            erase_count: 0,
            pages: vec![PageState::Free; pages as usize],
            write_pointer: 0,
            valid: 0,
            invalid: 0,
        }
    }

    pub fn page_count(&self) -> u32 {
        self.pages.len() as u32
    }

    pub fn pages(&self) -> &[PageState] {
        &self.pages
    }

    pub fn write_pointer(&self) -> u32 {
        self.write_pointer
    }

    pub fn valid_pages(&self) -> u32 {
        self.valid
    }

    pub fn invalid_pages(&self) -> u32 {
        self.invalid
    }

    pub fn free_pages(&self) -> u32 {
        self.page_count() - self.write_pointer
    }

    pub fn is_erased(&self) -> bool {
        self.write_pointer == 0
    }

    pub fn is_full(&self) -> bool {
        self.write_pointer == self.page_count()
    }
}

/// Forward LPN→PPN map. The reverse direction is the `lpn` stored in each
/// valid page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingTable {
    forward: Vec<Option<Ppn>>,
    live: u64,
}

impl MappingTable {
    fn new(logical_pages: u64) -> Self {
        MappingTable {
            forward: vec![None; logical_pages as usize],
            live: 0,
        }
    }

    pub fn get(&self, lpn: Lpn) -> Option<Ppn> {
        self.forward.get(lpn as usize).copied().flatten()
    }

    pub fn live(&self) -> u64 {
        self.live
    }

    pub fn len(&self) -> u64 {
        self.forward.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    fn set(&mut self, lpn: Lpn, ppn: Ppn) {
        let slot = &mut self.forward[lpn as usize];
        if slot.is_none() {
            self.live += 1;
        }
        *slot = Some(ppn);
    }

    fn clear(&mut self, lpn: Lpn) -> Option<Ppn> {
        let old = self.forward[lpn as usize].take();
        if old.is_some() {
            self.live -= 1;
        }
        old
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Program,
    Erase,
}

/// Who caused a flash operation: the host request itself, or space management
/// running in the foreground on its behalf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpOrigin {
    Host,
    Management,
}

/// One physical operation, recorded when the op log is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpEvent {
    pub kind: OpKind,
    pub mode: CellMode,
    pub channel: u32,
    pub origin: OpOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdState {
    geometry: FlashGeometry,
    latency: LatencyModel,
    blocks: Vec<BlockState>,
    mapping: MappingTable,
    device_pages_written: u64,
    erases: u64,
    #[serde(skip)]
    op_log: Option<Vec<OpEvent>>,
    #[serde(skip, default = "default_origin")]
    origin: OpOrigin,
}

fn default_origin() -> OpOrigin {
    OpOrigin::Host
}

impl SsdState {
    /// Builds an empty device. The first `floor(blocks * split)` block ids are
    /// SLC, which spreads SLC blocks evenly over channels.
    pub fn new(
        geometry: FlashGeometry,
        latency: LatencyModel,
        initial_mode_split: f64,
    ) -> Result<Self, SsdError> {
        geometry.validate()?;
        latency.validate()?;
        if !(0.0..=1.0).contains(&initial_mode_split) {
            return Err(SsdError::InvalidGeometry(format!(
                "initial mode split {initial_mode_split} outside [0, 1]"
            )));
        }
        let slc = geometry.slc_block_count(initial_mode_split);
        let blocks = (0..geometry.total_blocks())
            .map(|b| {
                let mode = if b < slc { CellMode::Slc } else { CellMode::Qlc };
                BlockState::new(mode, geometry.pages_per_block(mode))
            })
            .collect();
        let logical = geometry.logical_pages(initial_mode_split);
        if logical == 0 {
            return Err(SsdError::InvalidGeometry("zero logical capacity".into()));
        }
        Ok(SsdState {
            mapping: MappingTable::new(logical),
            geometry,
            latency,
            blocks,
            device_pages_written: 0,
            erases: 0,
            op_log: None,
            origin: OpOrigin::Host,
        })
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn blocks(&self) -> &[BlockState] {
        &self.blocks
    }

    pub fn block(&self, id: u32) -> Result<&BlockState, SsdError> {
        self.blocks.get(id as usize).ok_or(SsdError::NoSuchBlock(id))
    }

    pub fn mapping(&self) -> &MappingTable {
        &self.mapping
    }

    pub fn logical_pages(&self) -> u64 {
        self.mapping.len()
    }

    pub fn lookup(&self, lpn: Lpn) -> Option<Ppn> {
        self.mapping.get(lpn)
    }

    /// Payload tag of the current copy of `lpn`, if mapped.
    pub fn tag_of(&self, lpn: Lpn) -> Option<u64> {
        let ppn = self.mapping.get(lpn)?;
        match self.blocks[ppn.block as usize].pages[ppn.page as usize] {
            PageState::Valid { tag, .. } => Some(tag),
            _ => None,
        }
    }

    pub fn device_pages_written(&self) -> u64 {
        self.device_pages_written
    }

    pub fn erase_operations(&self) -> u64 {
        self.erases
    }

    pub fn raw_pages(&self) -> u64 {
        self.blocks.iter().map(|b| b.page_count() as u64).sum()
    }

    pub fn blocks_in_mode(&self, mode: CellMode) -> u32 {
        self.blocks.iter().filter(|b| b.mode == mode).count() as u32
    }

    pub fn enable_op_log(&mut self) {
        self.op_log.get_or_insert_with(Vec::new);
    }

    /// Drains recorded operations; empty when logging is disabled.
    pub fn take_op_log(&mut self) -> Vec<OpEvent> {
        self.op_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn set_origin(&mut self, origin: OpOrigin) {
        self.origin = origin;
    }

    fn log(&mut self, kind: OpKind, block: u32) {
        if let Some(log) = self.op_log.as_mut() {
            log.push(OpEvent {
                kind,
                mode: self.blocks[block as usize].mode,
                channel: self.geometry.channel_of(block),
                origin: self.origin,
            });
        }
    }

    fn check_ppn(&self, ppn: Ppn) -> Result<(), SsdError> {
        let block = self.block(ppn.block)?;
        if ppn.page >= block.page_count() {
            return Err(SsdError::NoSuchPage(ppn));
        }
        Ok(())
    }

    /// Marks the current copy of `lpn` invalid and unmaps it. Returns whether
    /// the LPN was mapped.
    pub fn invalidate_lpn(&mut self, lpn: Lpn) -> bool {
        if lpn >= self.logical_pages() {
            return false;
        }
        match self.mapping.clear(lpn) {
            Some(old) => {
                let block = &mut self.blocks[old.block as usize];
                block.pages[old.page as usize] = PageState::Invalid;
                block.valid -= 1;
                block.invalid += 1;
                true
            }
            None => false,
        }
    }

    /// Programs `lpn` into the free page at `ppn`, which must be the block's
    /// write pointer. Any older copy of `lpn` is invalidated.
    pub fn program_page(&mut self, ppn: Ppn, lpn: Lpn, tag: u64) -> Result<Micros, SsdError> {
        self.check_ppn(ppn)?;
        if lpn >= self.logical_pages() {
            return Err(SsdError::LpnOutOfRange {
                lpn,
                capacity: self.logical_pages(),
            });
        }
        let block = &self.blocks[ppn.block as usize];
        if block.pages[ppn.page as usize] != PageState::Free {
            return Err(SsdError::ProgramNonFree(ppn));
        }
        if ppn.page != block.write_pointer {
            return Err(SsdError::ProgramOutOfOrder {
                ppn,
                expected: block.write_pointer,
            });
        }
        self.invalidate_lpn(lpn);
        let block = &mut self.blocks[ppn.block as usize];
        block.pages[ppn.page as usize] = PageState::Valid { lpn, tag };
        block.write_pointer += 1;
        block.valid += 1;
        let mode = block.mode;
        self.mapping.set(lpn, ppn);
        self.device_pages_written += 1;
        self.log(OpKind::Program, ppn.block);
        Ok(self.latency.cost(OpKind::Program, mode))
    }

    pub fn read_page(&mut self, ppn: Ppn) -> Result<Micros, SsdError> {
        self.check_ppn(ppn)?;
        let block = &self.blocks[ppn.block as usize];
        match block.pages[ppn.page as usize] {
            PageState::Valid { .. } => {
                let mode = block.mode;
                self.log(OpKind::Read, ppn.block);
                Ok(self.latency.cost(OpKind::Read, mode))
            }
            _ => Err(SsdError::MappingCorruption(ppn)),
        }
    }

    pub fn erase_block(&mut self, id: u32) -> Result<Micros, SsdError> {
        let block = self.block(id)?;
        if block.valid > 0 {
            return Err(SsdError::EraseWithValidPages {
                block: id,
                valid: block.valid,
            });
        }
        let block = &mut self.blocks[id as usize];
        block.pages.fill(PageState::Free);
        block.write_pointer = 0;
        block.invalid = 0;
        block.erase_count += 1;
        let mode = block.mode;
        self.erases += 1;
        self.log(OpKind::Erase, id);
        Ok(self.latency.cost(OpKind::Erase, mode))
    }

    /// Switches an erased block to `target` mode and resizes its page array.
    /// Takes no simulated time.
    pub fn convert_block_mode(&mut self, id: u32, target: CellMode) -> Result<(), SsdError> {
        let pages = self.geometry.pages_per_block(target);
        let block = self.block(id)?;
        if !block.is_erased() {
            return Err(SsdError::ConvertNonEmpty(id));
        }
        if block.mode == target {
            return Err(SsdError::SameMode(id));
        }
        let block = &mut self.blocks[id as usize];
        block.mode = target;
        block.pages = vec![PageState::Free; pages as usize];
        Ok(())
    }

    /// Full scan of every structural invariant. Meant for tests and debugging.
    pub fn audit(&self) -> Result<(), String> {
        let mut valid_total = 0u64;
        for (id, block) in self.blocks.iter().enumerate() {
            let expected = self.geometry.pages_per_block(block.mode);
            if block.page_count() != expected {
                return Err(format!("block {id}: {} pages, expected {expected}", block.page_count()));
            }
            let (mut v, mut inv) = (0u32, 0u32);
            for (p, page) in block.pages.iter().enumerate() {
                let before_wp = (p as u32) < block.write_pointer;
                match *page {
                    PageState::Free if before_wp => {
                        return Err(format!("block {id} page {p}: free below write pointer"))
                    }
                    PageState::Free => {}
                    _ if !before_wp => {
                        return Err(format!("block {id} page {p}: programmed past write pointer"))
                    }
                    PageState::Invalid => inv += 1,
                    PageState::Valid { lpn, .. } => {
                        v += 1;
                        let here = Ppn::new(id as u32, p as u32);
                        if self.mapping.get(lpn) != Some(here) {
                            return Err(format!("page {here} holds lpn {lpn} which maps elsewhere"));
                        }
                    }
                }
            }
            if v != block.valid || inv != block.invalid {
                return Err(format!("block {id}: cached counts out of sync"));
            }
            valid_total += v as u64;
        }
        for (lpn, slot) in self.mapping.forward.iter().enumerate() {
            if let Some(ppn) = slot {
                match self.blocks[ppn.block as usize].pages[ppn.page as usize] {
                    PageState::Valid { lpn: stored, .. } if stored == lpn as u64 => {}
                    other => return Err(format!("lpn {lpn} maps to {ppn} in state {other:?}")),
                }
            }
        }
        if valid_total != self.mapping.live {
            return Err(format!(
                "{valid_total} valid pages but {} live lpns",
                self.mapping.live
            ));
        }
        Ok(())
    }
}
