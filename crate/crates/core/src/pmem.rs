//! Persistent-memory device model and log-zone layout.
//!
//! Home lines are stored sparsely; the log zone is kept as typed areas whose
//! on-media addresses are fixed by [`LogZoneLayout`]. Every store goes through
//! a single accounting path so per-area byte counts can be audited.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Address, LineBytes, LINE_BYTES, LOG_ZONE_BASE};
use crate::cache::{TxState, TX_ID_LIMIT};
use crate::config::{SimConfig, EWPQ_ENTRY_BYTES};

/// On-media size of a log entry: 64 data bytes + 16 bytes of metadata.
pub const LOG_ENTRY_BYTES: u64 = 80;
/// Emergency records share the log-entry packing.
pub const EMERGENCY_RECORD_BYTES: u64 = 80;
pub const TXLEN_BYTES: u64 = 4;
/// Log slots are addressed by a 21-bit field, which caps the log area.
pub const MAX_LOG_SLOTS: u64 = 1 << 21;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum PmemError {
    #[error("address {0:#x} outside the home range")]
    OutOfRange(u64),
    #[error("invalid pmem request: {0}")]
    Validation(&'static str),
    #[error("transaction {0} already has a nonzero TxLen")]
    DoubleCommit(u32),
    #[error("log zone of {bytes} bytes cannot hold its fixed areas")]
    LogZoneTooSmall { bytes: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmemArea {
    Home,
    Log,
    Profile,
    Extension,
    Emergency,
    /// Shutdown flag and the saved LogHead/LogTail/eWPQ.
    Metadata,
}

impl PmemArea {
    pub const ALL: [PmemArea; 6] = [
        PmemArea::Home,
        PmemArea::Log,
        PmemArea::Profile,
        PmemArea::Extension,
        PmemArea::Emergency,
        PmemArea::Metadata,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Fixed placement of the log-zone areas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogZoneLayout {
    pub base: u64,
    pub flag_addr: u64,
    pub mc_save_base: u64,
    pub mc_save_capacity: u64,
    pub profile_base: u64,
    pub profile_count: u64,
    pub extension_base: u64,
    pub extension_capacity: u64,
    pub emergency_base: u64,
    pub emergency_capacity: u64,
    pub log_base: u64,
    pub log_capacity: u64,
    pub end: u64,
}

fn align_line(x: u64) -> u64 {
    x.div_ceil(LINE_BYTES) * LINE_BYTES
}

impl LogZoneLayout {
    pub fn for_config(cfg: &SimConfig) -> Result<Self, PmemError> {
        let base = LOG_ZONE_BASE;
        let end = base + cfg.log_zone_bytes;
        let flag_addr = base;
        let mc_save_base = base + LINE_BYTES;
        let profile_count = TX_ID_LIMIT;
        let extension_capacity = cfg.extension_capacity();
        let emergency_capacity = cfg.max_transactional_lines();
        // Snapshot must hold every entry the eWPQ can hold.
        let fixed_without_log = |mc_cap: u64| {
            let profile_base = align_line(mc_save_base + 16 + mc_cap * EWPQ_ENTRY_BYTES);
            let extension_base = align_line(profile_base + profile_count * TXLEN_BYTES);
            let emergency_base = align_line(extension_base + extension_capacity * EWPQ_ENTRY_BYTES);
            let log_base = align_line(emergency_base + emergency_capacity * EMERGENCY_RECORD_BYTES);
            (profile_base, extension_base, emergency_base, log_base)
        };
        let (mc_save_capacity, (profile_base, extension_base, emergency_base, log_base), log_capacity) =
            match cfg.ewpq_capacity() {
                Some(cap) => {
                    let f = fixed_without_log(cap);
                    let slots = end.saturating_sub(f.3) / LOG_ENTRY_BYTES;
                    (cap, f, slots.min(MAX_LOG_SLOTS))
                }
                None => {
                    // An unbounded eWPQ can track at most one entry per log slot.
                    let mut cap = MAX_LOG_SLOTS;
                    loop {
                        let f = fixed_without_log(cap);
                        let slots = (end.saturating_sub(f.3) / LOG_ENTRY_BYTES).min(MAX_LOG_SLOTS);
                        if slots >= cap || cap == 0 {
                            break (cap, f, slots);
                        }
                        cap = slots;
                    }
                }
            };
        if log_capacity == 0 || log_base >= end {
            return Err(PmemError::LogZoneTooSmall { bytes: cfg.log_zone_bytes });
        }
        Ok(LogZoneLayout {
            base,
            flag_addr,
            mc_save_base,
            mc_save_capacity,
            profile_base,
            profile_count,
            extension_base,
            extension_capacity,
            emergency_base,
            emergency_capacity,
            log_base,
            log_capacity,
            end,
        })
    }

    pub fn profile_addr(&self, tx_id: u32) -> u64 {
        self.profile_base + tx_id as u64 * TXLEN_BYTES
    }

    pub fn log_addr(&self, slot: u32) -> u64 {
        self.log_base + slot as u64 * LOG_ENTRY_BYTES
    }

    pub fn extension_addr(&self, slot: u32) -> u64 {
        self.extension_base + slot as u64 * EWPQ_ENTRY_BYTES
    }

    pub fn emergency_addr(&self, idx: u64) -> u64 {
        self.emergency_base + idx * EMERGENCY_RECORD_BYTES
    }

    /// Areas do not overlap and stay inside the zone.
    pub fn is_disjoint(&self) -> bool {
        let spans = [
            (self.flag_addr, self.flag_addr + 1),
            (self.mc_save_base, self.mc_save_base + 16 + self.mc_save_capacity * EWPQ_ENTRY_BYTES),
            (self.profile_base, self.profile_base + self.profile_count * TXLEN_BYTES),
            (self.extension_base, self.extension_base + self.extension_capacity * EWPQ_ENTRY_BYTES),
            (self.emergency_base, self.emergency_base + self.emergency_capacity * EMERGENCY_RECORD_BYTES),
            (self.log_base, self.log_base + self.log_capacity * LOG_ENTRY_BYTES),
        ];
        spans.windows(2).all(|w| w[0].1 <= w[1].0) && spans.last().unwrap().1 <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub data: LineBytes,
    pub home: Address,
    pub tx_id: u32,
    pub tx_state: TxState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmergencyRecord {
    pub data: LineBytes,
    pub home: Address,
    pub tx_id: u32,
    pub tx_state: TxState,
}

/// Memory-controller state persisted on power-off.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct McSave {
    pub log_head: u64,
    pub log_tail: u64,
    /// eWPQ slot -> encoded entry, valid entries only (the validity bitmap).
    pub entries: BTreeMap<u32, u64>,
}

/// One store observed by the write monitor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteRecord {
    pub area: PmemArea,
    pub addr: u64,
    pub len: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmemCounters {
    pub bytes_written: [u64; 6],
    pub writes: u64,
    pub bytes_read: u64,
    pub reads: u64,
}

impl PmemCounters {
    pub fn total_written(&self) -> u64 {
        self.bytes_written.iter().sum()
    }

    pub fn written(&self, area: PmemArea) -> u64 {
        self.bytes_written[area.index()]
    }
}

#[derive(Clone, Debug)]
pub struct PmemDevice {
    layout: LogZoneLayout,
    home: FxHashMap<u64, LineBytes>,
    profiles: FxHashMap<u32, u32>,
    log: FxHashMap<u32, LogEntry>,
    extension: Vec<Option<u64>>,
    mc_save: McSave,
    emergency: Vec<EmergencyRecord>,
    shutdown_flag: u8,
    counters: PmemCounters,
    monitor: Option<Vec<WriteRecord>>,
    write_ns: u64,
}

impl PmemDevice {
    pub fn new(cfg: &SimConfig) -> Result<Self, PmemError> {
        let layout = LogZoneLayout::for_config(cfg)?;
        Ok(Self::with_layout(layout, cfg.pmem_write_ns))
    }

    pub fn with_layout(layout: LogZoneLayout, write_ns: u64) -> Self {
        PmemDevice {
            extension: vec![None; layout.extension_capacity as usize],
            layout,
            home: FxHashMap::default(),
            profiles: FxHashMap::default(),
            log: FxHashMap::default(),
            mc_save: McSave::default(),
            emergency: Vec::new(),
            shutdown_flag: 0,
            counters: PmemCounters::default(),
            monitor: None,
            write_ns,
        }
    }

    pub fn layout(&self) -> &LogZoneLayout {
        &self.layout
    }

    pub fn write_ns(&self) -> u64 {
        self.write_ns
    }

    pub fn counters(&self) -> &PmemCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = PmemCounters::default();
    }

    pub fn enable_monitor(&mut self) {
        self.monitor = Some(Vec::new());
    }

    pub fn take_monitor(&mut self) -> Vec<WriteRecord> {
        self.monitor.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn account(&mut self, area: PmemArea, addr: u64, len: u64) {
        self.counters.bytes_written[area.index()] += len;
        self.counters.writes += 1;
        if let Some(m) = self.monitor.as_mut() {
            m.push(WriteRecord { area, addr, len });
        }
    }

    fn account_read(&mut self, len: u64) {
        self.counters.bytes_read += len;
        self.counters.reads += 1;
    }

    // ---- home range -------------------------------------------------------

    pub fn read_home(&mut self, line: Address) -> LineBytes {
        self.account_read(LINE_BYTES);
        self.peek_home(line)
    }

    /// Reads without accounting.
    pub fn peek_home(&self, line: Address) -> LineBytes {
        debug_assert!(line.is_line_aligned());
        self.home.get(&line.0).copied().unwrap_or([0; LINE_BYTES as usize])
    }

    pub fn write_home(&mut self, line: Address, data: &LineBytes) {
        debug_assert!(line.is_line_aligned() && line.is_home());
        self.account(PmemArea::Home, line.0, LINE_BYTES);
        self.home.insert(line.0, *data);
    }

    /// Raw store into the home range; may not cross a line. Returns the
    /// device write latency in nanoseconds.
    pub fn pmem_write(&mut self, addr: Address, bytes: &[u8]) -> Result<u64, PmemError> {
        if bytes.is_empty() {
            return Err(PmemError::Validation("zero-length write"));
        }
        if !addr.is_home() || addr.0.checked_add(bytes.len() as u64).is_none_or(|e| e > LOG_ZONE_BASE) {
            return Err(PmemError::OutOfRange(addr.0));
        }
        if addr.offset() + bytes.len() > LINE_BYTES as usize {
            return Err(PmemError::Validation("write crosses a cache line"));
        }
        self.account(PmemArea::Home, addr.0, bytes.len() as u64);
        let line = self.home.entry(addr.line().0).or_insert([0; LINE_BYTES as usize]);
        line[addr.offset()..addr.offset() + bytes.len()].copy_from_slice(bytes);
        Ok(self.write_ns)
    }

    pub fn home_lines(&self) -> impl Iterator<Item = (Address, &LineBytes)> {
        self.home.iter().map(|(a, d)| (Address(*a), d))
    }

    // ---- transaction profiles ---------------------------------------------

    pub fn profile(&self, tx_id: u32) -> u32 {
        self.profiles.get(&tx_id).copied().unwrap_or(0)
    }

    /// Transactions whose in-pmem TxLen is nonzero, ascending by id.
    pub fn committed_profiles(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> = self.profiles.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_unstable();
        v
    }

    /// Writes TxLen = 0 (transaction start).
    pub fn init_profile(&mut self, tx_id: u32) {
        let addr = self.layout.profile_addr(tx_id);
        self.account(PmemArea::Profile, addr, TXLEN_BYTES);
        self.profiles.remove(&tx_id);
    }

    /// Atomically publishes the final length: the commit record.
    pub fn set_txlen(&mut self, tx_id: u32, len: u32) -> Result<(), PmemError> {
        if len == 0 {
            return Err(PmemError::Validation("TxLen 0 is the uncommitted sentinel"));
        }
        if self.profile(tx_id) != 0 {
            return Err(PmemError::DoubleCommit(tx_id));
        }
        let addr = self.layout.profile_addr(tx_id);
        self.account(PmemArea::Profile, addr, TXLEN_BYTES);
        self.profiles.insert(tx_id, len);
        Ok(())
    }

    /// Recovery's final step for a committed transaction.
    pub fn reset_txlen(&mut self, tx_id: u32) {
        self.init_profile(tx_id);
    }

    // ---- log entries --------------------------------------------------------

    pub fn log_entry(&self, slot: u32) -> Option<&LogEntry> {
        self.log.get(&slot)
    }

    pub fn read_log_entry(&mut self, slot: u32) -> Option<LogEntry> {
        self.account_read(LOG_ENTRY_BYTES);
        self.log.get(&slot).cloned()
    }

    pub fn write_log_entry(&mut self, slot: u32, entry: LogEntry) {
        debug_assert!((slot as u64) < self.layout.log_capacity);
        let addr = self.layout.log_addr(slot);
        self.account(PmemArea::Log, addr, LOG_ENTRY_BYTES);
        self.log.insert(slot, entry);
    }

    /// Rewrites the 8-byte {tx_id, tx_state} metadata word of a log entry.
    pub fn set_log_entry_state(&mut self, slot: u32, state: TxState) {
        let addr = self.layout.log_addr(slot) + LINE_BYTES + 8;
        self.account(PmemArea::Log, addr, 8);
        if let Some(e) = self.log.get_mut(&slot) {
            e.tx_state = state;
        }
    }

    /// Forgets a slot that fell behind LogTail. Its bytes are garbage on
    /// media; dropping them only bounds host memory.
    pub fn discard_log_slot(&mut self, slot: u32) {
        self.log.remove(&slot);
    }

    pub fn log_slots(&self) -> impl Iterator<Item = (u32, &LogEntry)> {
        self.log.iter().map(|(k, v)| (*k, v))
    }

    // ---- eWPQ extension -------------------------------------------------------

    pub fn extension(&self) -> &[Option<u64>] {
        &self.extension
    }

    pub fn write_extension(&mut self, slot: u32, entry: Option<u64>) {
        let addr = self.layout.extension_addr(slot);
        self.account(PmemArea::Extension, addr, EWPQ_ENTRY_BYTES);
        self.extension[slot as usize] = entry;
    }

    pub fn read_extension(&mut self, slot: u32) -> Option<u64> {
        self.account_read(EWPQ_ENTRY_BYTES);
        self.extension[slot as usize]
    }

    // ---- emergency area -------------------------------------------------------

    pub fn emergency(&self) -> &[EmergencyRecord] {
        &self.emergency
    }

    pub fn append_emergency(&mut self, rec: EmergencyRecord) {
        let addr = self.layout.emergency_addr(self.emergency.len() as u64);
        self.account(PmemArea::Emergency, addr, EMERGENCY_RECORD_BYTES);
        self.emergency.push(rec);
    }

    pub fn clear_emergency(&mut self) {
        let addr = self.layout.emergency_base;
        self.account(PmemArea::Emergency, addr, 8);
        self.emergency.clear();
    }

    // ---- saved MC state and shutdown flag ----------------------------------

    pub fn mc_save(&self) -> &McSave {
        &self.mc_save
    }

    pub fn save_registers(&mut self, log_head: u64, log_tail: u64) {
        let addr = self.layout.mc_save_base;
        self.account(PmemArea::Metadata, addr, 16);
        self.mc_save.log_head = log_head;
        self.mc_save.log_tail = log_tail;
    }

    pub fn save_ewpq_entry(&mut self, slot: u32, encoded: u64) {
        let addr = self.layout.mc_save_base + 16 + slot as u64 * EWPQ_ENTRY_BYTES;
        self.account(PmemArea::Metadata, addr, EWPQ_ENTRY_BYTES);
        self.mc_save.entries.insert(slot, encoded);
    }

    /// Clears one bit of the saved validity bitmap.
    pub fn clear_saved_ewpq_entry(&mut self, slot: u32) {
        let addr = self.layout.mc_save_base + 16 + slot as u64 * EWPQ_ENTRY_BYTES;
        self.account(PmemArea::Metadata, addr, 1);
        self.mc_save.entries.remove(&slot);
    }

    pub fn clear_saved_ewpq(&mut self) {
        let addr = self.layout.mc_save_base + 16;
        self.account(PmemArea::Metadata, addr, 8);
        self.mc_save.entries.clear();
    }

    pub fn shutdown_flag(&self) -> u8 {
        self.shutdown_flag
    }

    pub fn write_shutdown_flag(&mut self, v: u8) {
        let addr = self.layout.flag_addr;
        self.account(PmemArea::Metadata, addr, 1);
        self.shutdown_flag = v;
    }

    // ---- used by the dump decoder ------------------------------------------

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore_parts(
        &mut self,
        flag: u8,
        mc_save: McSave,
        profiles: Vec<(u32, u32)>,
        log: Vec<(u32, LogEntry)>,
        extension: Vec<(u32, u64)>,
        emergency: Vec<EmergencyRecord>,
        home: Vec<(u64, LineBytes)>,
    ) {
        self.shutdown_flag = flag;
        self.mc_save = mc_save;
        self.profiles = profiles.into_iter().collect();
        self.log = log.into_iter().collect();
        self.extension = vec![None; self.layout.extension_capacity as usize];
        for (s, e) in extension {
            self.extension[s as usize] = Some(e);
        }
        self.emergency = emergency;
        self.home = home.into_iter().collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> PmemDevice {
        PmemDevice::new(&SimConfig::default()).unwrap()
    }

    #[test]
    fn layout_is_disjoint_and_bounded() {
        for cfg in [SimConfig::default(), SimConfig::stress(), SimConfig::shrunk_8x()] {
            let l = LogZoneLayout::for_config(&cfg).unwrap();
            assert!(l.is_disjoint(), "{l:?}");
            assert!(l.log_capacity <= MAX_LOG_SLOTS);
        }
        let cfg = SimConfig { ewpq_unbounded: true, ..SimConfig::default() };
        let l = LogZoneLayout::for_config(&cfg).unwrap();
        assert!(l.is_disjoint());
        assert_eq!(l.extension_capacity, 0);
    }

    #[test]
    fn emergency_area_sized_for_every_transactional_line() {
        let cfg = SimConfig::default();
        let l = LogZoneLayout::for_config(&cfg).unwrap();
        // 8 x (128 sets x 4) + 8 x (512 x 4) + 16384 x 4
        assert_eq!(l.emergency_capacity, 8 * 512 + 8 * 2048 + 65_536);
    }

    #[test]
    fn line_write_counts_sixty_four_bytes() {
        let mut d = dev();
        let ns = d.pmem_write(Address(0x1000), &[1u8; 64]).unwrap();
        assert_eq!(ns, 100);
        assert_eq!(d.counters().written(PmemArea::Home), 64);
    }

    #[test]
    fn txlen_write_counts_four_bytes() {
        let mut d = dev();
        d.set_txlen(7, 34).unwrap();
        assert_eq!(d.counters().written(PmemArea::Profile), 4);
        assert_eq!(d.profile(7), 34);
    }

    #[test]
    fn zero_length_write_rejected() {
        let mut d = dev();
        assert!(matches!(d.pmem_write(Address(0), &[]), Err(PmemError::Validation(_))));
        assert!(matches!(d.pmem_write(Address(LOG_ZONE_BASE), &[1]), Err(PmemError::OutOfRange(_))));
    }

    #[test]
    fn set_txlen_rules() {
        let mut d = dev();
        assert!(matches!(d.set_txlen(7, 0), Err(PmemError::Validation(_))));
        d.set_txlen(7, 3).unwrap();
        assert_eq!(d.set_txlen(7, 4), Err(PmemError::DoubleCommit(7)));
        d.reset_txlen(7);
        assert_eq!(d.profile(7), 0);
    }

    #[test]
    fn partial_write_lands_in_line() {
        let mut d = dev();
        d.pmem_write(Address(0x48), &7u64.to_le_bytes()).unwrap();
        let line = d.peek_home(Address(0x40));
        assert_eq!(u64::from_le_bytes(line[8..16].try_into().unwrap()), 7);
    }

    #[test]
    fn accounting_matches_shadow_sum() {
        let mut d = dev();
        d.enable_monitor();
        d.write_home(Address(0), &[0; 64]);
        d.init_profile(3);
        d.set_txlen(3, 1).unwrap();
        d.write_log_entry(0, LogEntry { data: [0; 64], home: Address(0), tx_id: 3, tx_state: TxState::Uncommitted });
        d.write_extension(0, Some(5));
        d.save_registers(1, 0);
        let shadow: u64 = d.take_monitor().iter().map(|w| w.len).sum();
        assert_eq!(shadow, d.counters().total_written());
        assert_eq!(shadow, 64 + 4 + 4 + 80 + 8 + 16);
    }
}
