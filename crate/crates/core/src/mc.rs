//! Memory controller: WPQ timing, the eWPQ and its in-pmem extension, the
//! LogHead/LogTail registers, migration scans and log garbage collection.

use std::collections::{BTreeSet, VecDeque};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::addr::{Address, LineBytes, LINE_BYTES};
use crate::cache::TxState;
use crate::clock::Clock;
use crate::config::{SimConfig, EWPQ_ENTRY_BYTES};
use crate::error::{SimError, SimResult};
use crate::event::{CrashCtl, EventKind};
use crate::pmem::{LogEntry, PmemDevice, LOG_ENTRY_BYTES};

const FIELD_BITS: u32 = 21;
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;

/// Low 21 bits of the line number of `home`.
pub fn truncate_home(home: Address) -> u32 {
    (home.line_number() & FIELD_MASK) as u32
}

pub fn truncate_tx(tx_id: u32) -> u32 {
    (tx_id as u64 & FIELD_MASK) as u32
}

/// One eWPQ entry: `[63] tx_state | [62:42] tx_id_lo | [41:21] home_lo | [20:0] log_lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EwpqEntry {
    pub tx_state: TxState,
    pub tx_id_lo: u32,
    pub home_lo: u32,
    pub log_lo: u32,
}

impl EwpqEntry {
    pub fn encode(&self) -> u64 {
        ((self.tx_state.bit() as u64) << 63)
            | ((self.tx_id_lo as u64 & FIELD_MASK) << 42)
            | ((self.home_lo as u64 & FIELD_MASK) << 21)
            | (self.log_lo as u64 & FIELD_MASK)
    }

    pub fn decode(v: u64) -> Self {
        EwpqEntry {
            tx_state: TxState::from_bit((v >> 63) as u8),
            tx_id_lo: ((v >> 42) & FIELD_MASK) as u32,
            home_lo: ((v >> 21) & FIELD_MASK) as u32,
            log_lo: (v & FIELD_MASK) as u32,
        }
    }
}

/// Where a valid mapping currently lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loc {
    Ewpq(u32),
    Ext(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogHit {
    pub loc: Loc,
    pub log_slot: u32,
    pub data: LineBytes,
    pub tx_id: u32,
    pub tx_state: TxState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lookup {
    HitLog(LogHit),
    Miss,
    /// Mapped to a log entry of another, uncommitted transaction.
    Forbidden { owner: u32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McCounters {
    pub lookups: u64,
    pub log_hits: u64,
    pub extension_probes: u64,
    pub premature_flushes: u64,
    pub spills: u64,
    pub migrations: u64,
    pub migration_scans: u64,
    pub gc_runs: u64,
    pub gc_moved: u64,
    pub gc_migrated: u64,
    pub truncation_collisions: u64,
    pub offchip_commits: u64,
    pub offchip_aborts: u64,
    pub wpq_stall_cycles: u64,
    pub wpq_combined: u64,
    pub home_writebacks: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GcReport {
    pub entries_scanned: u64,
    pub entries_moved: u64,
    pub entries_migrated: u64,
    pub new_log_tail: u64,
}

/// Write pending queue timing: one drain channel, `cap` entries, and write
/// combining for a line still waiting to be drained.
#[derive(Clone, Debug)]
pub struct Wpq {
    cap: usize,
    write_cycles: u64,
    pending: VecDeque<(u64, u64)>,
    busy_until: u64,
}

impl Wpq {
    pub fn new(cap: u64, write_cycles: u64) -> Self {
        Wpq { cap: cap as usize, write_cycles, pending: VecDeque::new(), busy_until: 0 }
    }

    fn retire(&mut self, now: u64) {
        while self.pending.front().is_some_and(|e| e.1 <= now) {
            self.pending.pop_front();
        }
    }

    /// Queues a write of `line` issued by a core at `now`; returns the time
    /// the core may continue and whether the write was combined.
    pub fn submit(&mut self, now: u64, line: u64) -> (u64, bool) {
        self.retire(now);
        let wc = self.write_cycles;
        if self.pending.iter().any(|&(l, done)| l == line && done - wc > now) {
            return (now, true);
        }
        let mut t = now;
        while self.pending.len() >= self.cap {
            t = self.pending.front().map(|e| e.1).unwrap_or(t).max(t);
            self.retire(t);
        }
        let start = t.max(self.busy_until);
        self.busy_until = start + wc;
        self.pending.push_back((line, self.busy_until));
        (t, false)
    }

    /// Controller-internal write: occupies the channel, never stalls a core.
    pub fn submit_background(&mut self, now: u64) {
        self.busy_until = self.busy_until.max(now) + self.write_cycles;
    }

    pub fn occupancy(&self) -> usize {
        self.pending.len()
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }
}

#[derive(Clone, Debug)]
struct Slot {
    enc: u64,
    lru: u64,
    log_idx: u64,
}

#[derive(Clone, Debug)]
pub struct MemoryController {
    pub pmem: PmemDevice,
    pub wpq: Wpq,
    pub counters: McCounters,
    cap: Option<usize>,
    slots: Vec<Option<Slot>>,
    free: Vec<u32>,
    by_home: FxHashMap<u32, SmallVec<[Loc; 2]>>,
    ext_cap: usize,
    ext_log_idx: Vec<u64>,
    ext_free: Vec<u32>,
    ext_used: usize,
    /// Candidate mappings per full tx id; stale locations are skipped.
    by_tx: FxHashMap<u32, Vec<Loc>>,
    by_log: FxHashMap<u64, Loc>,
    live: BTreeSet<u64>,
    log_head: u64,
    log_tail: u64,
    log_cap: u64,
    lru_clock: u64,
    search_cycles: u64,
    read_cycles: u64,
    gc_threshold: u64,
    gc_chunk: u64,
}

impl MemoryController {
    pub fn new(cfg: &SimConfig, pmem: PmemDevice) -> Self {
        let cap = cfg.ewpq_capacity().map(|c| c as usize);
        let ext_cap = pmem.layout().extension_capacity as usize;
        let log_cap = pmem.layout().log_capacity;
        MemoryController {
            wpq: Wpq::new(cfg.wpq_entries, cfg.pmem_write_cycles()),
            counters: McCounters::default(),
            cap,
            slots: Vec::new(),
            free: Vec::new(),
            by_home: FxHashMap::default(),
            ext_cap,
            ext_log_idx: vec![0; ext_cap],
            ext_free: (0..ext_cap as u32).rev().collect(),
            ext_used: 0,
            by_tx: FxHashMap::default(),
            by_log: FxHashMap::default(),
            live: BTreeSet::new(),
            log_head: pmem.mc_save().log_head,
            log_tail: pmem.mc_save().log_head,
            log_cap,
            lru_clock: 0,
            search_cycles: cfg.ewpq_search_cycles,
            read_cycles: cfg.pmem_read_cycles(),
            gc_threshold: cfg.gc_threshold,
            gc_chunk: cfg.gc_chunk,
            pmem,
        }
    }

    pub fn log_head(&self) -> u64 {
        self.log_head
    }

    pub fn log_tail(&self) -> u64 {
        self.log_tail
    }

    pub fn log_capacity(&self) -> u64 {
        self.log_cap
    }

    pub fn log_slot(&self, idx: u64) -> u32 {
        (idx % self.log_cap) as u32
    }

    /// Valid eWPQ entries (not counting the extension).
    pub fn ewpq_valid(&self) -> usize {
        self.slots.len() - self.free.len()
    }

    pub fn extension_valid(&self) -> usize {
        self.ext_used
    }

    pub fn valid_mappings(&self) -> usize {
        self.ewpq_valid() + self.ext_used
    }

    /// Validity bitmap of the on-chip eWPQ.
    pub fn validity_bitmap(&self) -> bitvec::vec::BitVec {
        self.slots.iter().map(Option::is_some).collect()
    }

    fn entry_at(&self, loc: Loc) -> Option<EwpqEntry> {
        match loc {
            Loc::Ewpq(s) => self.slots.get(s as usize)?.as_ref().map(|x| EwpqEntry::decode(x.enc)),
            Loc::Ext(s) => self.pmem.extension().get(s as usize).copied().flatten().map(EwpqEntry::decode),
        }
    }

    fn any_committed_live(&self) -> bool {
        self.by_log.values().any(|&l| self.entry_at(l).is_some_and(|e| e.tx_state == TxState::Committed))
    }

    fn log_idx_at(&self, loc: Loc) -> u64 {
        match loc {
            Loc::Ewpq(s) => self.slots[s as usize].as_ref().map(|x| x.log_idx).unwrap_or(0),
            Loc::Ext(s) => self.ext_log_idx[s as usize],
        }
    }

    /// All valid mappings with their decoded entries.
    pub fn mappings(&self) -> Vec<(Loc, EwpqEntry)> {
        let mut v: Vec<(Loc, EwpqEntry)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (Loc::Ewpq(i as u32), EwpqEntry::decode(s.enc))))
            .collect();
        v.extend(
            self.pmem
                .extension()
                .iter()
                .enumerate()
                .filter_map(|(i, e)| e.map(|e| (Loc::Ext(i as u32), EwpqEntry::decode(e)))),
        );
        v
    }

    // ---- lookup ---------------------------------------------------------

    /// Searches the eWPQ (then the extension) for `home`. Charges the search
    /// and any extension probe to `clock`. Does not nullify.
    pub fn lookup(&mut self, home: Address, requester: Option<u32>, clock: &mut Clock) -> Lookup {
        self.counters.lookups += 1;
        clock.advance(self.search_cycles);
        let lo = truncate_home(home);
        let cands: SmallVec<[Loc; 2]> = self.by_home.get(&lo).cloned().unwrap_or_default();
        let (on_chip, ext): (SmallVec<[Loc; 2]>, SmallVec<[Loc; 2]>) =
            cands.into_iter().partition(|l| matches!(l, Loc::Ewpq(_)));
        if let Some(r) = self.match_candidates(home, requester, &on_chip) {
            return r;
        }
        if self.ext_used > 0 {
            self.counters.extension_probes += 1;
            clock.advance(self.read_cycles);
            if let Some(r) = self.match_candidates(home, requester, &ext) {
                return r;
            }
        }
        Lookup::Miss
    }

    fn match_candidates(&mut self, home: Address, requester: Option<u32>, cands: &[Loc]) -> Option<Lookup> {
        for &loc in cands {
            let Some(e) = self.entry_at(loc) else { continue };
            let slot = e.log_lo;
            let Some(log) = self.pmem.log_entry(slot) else { continue };
            if log.home != home {
                self.counters.truncation_collisions += 1;
                continue;
            }
            let (tx_id, data) = (log.tx_id, log.data);
            if let Loc::Ewpq(s) = loc {
                self.lru_clock += 1;
                if let Some(x) = self.slots[s as usize].as_mut() {
                    x.lru = self.lru_clock;
                }
            }
            if e.tx_state == TxState::Uncommitted && requester != Some(tx_id) {
                return Some(Lookup::Forbidden { owner: tx_id });
            }
            self.counters.log_hits += 1;
            return Some(Lookup::HitLog(LogHit { loc, log_slot: slot, data, tx_id, tx_state: e.tx_state }));
        }
        None
    }

    /// Side-effect-free search used by peeks and the oracle.
    pub fn peek(&self, home: Address) -> Option<LogHit> {
        let lo = truncate_home(home);
        for &loc in self.by_home.get(&lo)?.iter() {
            let Some(e) = self.entry_at(loc) else { continue };
            let Some(log) = self.pmem.log_entry(e.log_lo) else { continue };
            if log.home == home {
                return Some(LogHit {
                    loc,
                    log_slot: e.log_lo,
                    data: log.data,
                    tx_id: log.tx_id,
                    tx_state: e.tx_state,
                });
            }
        }
        None
    }

    fn unlink(&mut self, loc: Loc, home_lo: u32, log_idx: u64) {
        if let Some(v) = self.by_home.get_mut(&home_lo) {
            v.retain(|l| *l != loc);
            if v.is_empty() {
                self.by_home.remove(&home_lo);
            }
        }
        if self.by_log.get(&log_idx) == Some(&loc) {
            self.by_log.remove(&log_idx);
            self.live.remove(&log_idx);
        }
    }

    /// Invalidates one mapping (validity bit / extension record). The log
    /// entry becomes garbage.
    fn invalidate(&mut self, loc: Loc) {
        let Some(e) = self.entry_at(loc) else { return };
        let idx = self.log_idx_at(loc);
        match loc {
            Loc::Ewpq(s) => {
                self.slots[s as usize] = None;
                self.free.push(s);
            }
            Loc::Ext(s) => {
                self.pmem.write_extension(s, None);
                self.ext_free.push(s);
                self.ext_used -= 1;
            }
        }
        self.unlink(loc, e.home_lo, idx);
    }

    /// Drops the mapping of a line just delivered to the cache hierarchy.
    pub fn nullify(&mut self, loc: Loc, crash: &mut CrashCtl) -> SimResult<()> {
        crash.point(EventKind::EwpqNullify)?;
        self.invalidate(loc);
        Ok(())
    }

    // ---- premature flush -------------------------------------------------

    fn alloc_ewpq_slot(&mut self) -> Option<u32> {
        if let Some(s) = self.free.pop() {
            return Some(s);
        }
        if self.cap.is_none_or(|c| self.slots.len() < c) {
            self.slots.push(None);
            return Some(self.slots.len() as u32 - 1);
        }
        None
    }

    /// Moves the LRU eWPQ entry to the extension area.
    pub fn spill(&mut self, clock: &mut Clock, crash: &mut CrashCtl) -> SimResult<u32> {
        let (victim, _) = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s.lru)))
            .min_by_key(|x| x.1)
            .ok_or_else(|| SimError::SimFault("spill requested with an empty eWPQ".into()))?;
        let Some(ext_slot) = self.ext_free.last().copied() else {
            return Err(SimError::SimFault(format!(
                "eWPQ extension full: {} records in use, capacity {}",
                self.ext_used, self.ext_cap
            )));
        };
        crash.point(EventKind::ExtensionWrite)?;
        self.ext_free.pop();
        let s = self.slots[victim].take().expect("victim is valid");
        self.free.push(victim as u32);
        self.pmem.write_extension(ext_slot, Some(s.enc));
        self.ext_log_idx[ext_slot as usize] = s.log_idx;
        self.ext_used += 1;
        let e = EwpqEntry::decode(s.enc);
        let from = Loc::Ewpq(victim as u32);
        let to = Loc::Ext(ext_slot);
        if let Some(v) = self.by_home.get_mut(&e.home_lo) {
            for l in v.iter_mut().filter(|l| **l == from) {
                *l = to;
            }
        }
        self.by_log.insert(s.log_idx, to);
        if e.tx_state == TxState::Uncommitted {
            if let Some(log) = self.pmem.log_entry(e.log_lo) {
                let tx = log.tx_id;
                self.by_tx.entry(tx).or_default().push(to);
            }
        }
        self.counters.spills += 1;
        self.core_write(self.pmem.layout().extension_addr(ext_slot) / LINE_BYTES, clock);
        Ok(ext_slot)
    }

    /// A core-issued store that must pass through the WPQ.
    pub fn core_write(&mut self, line_no: u64, clock: &mut Clock) {
        let (t, combined) = self.wpq.submit(clock.now(), line_no);
        if combined {
            self.counters.wpq_combined += 1;
        }
        self.stall_to(clock, t);
    }

    /// Writes a dirty line evicted from the LLC back to its home address.
    pub fn writeback_home(&mut self, home: Address, data: &LineBytes, clock: &mut Clock, crash: &mut CrashCtl) -> SimResult<()> {
        crash.point(EventKind::HomeWrite)?;
        self.pmem.write_home(home, data);
        self.counters.home_writebacks += 1;
        self.core_write(home.line_number(), clock);
        Ok(())
    }

    fn stall_to(&mut self, clock: &mut Clock, t: u64) {
        if t > clock.now() {
            self.counters.wpq_stall_cycles += t - clock.now();
            clock.advance_to(t);
        }
    }

    /// Redirects an evicted uncommitted line to a fresh log entry and maps it
    /// in the eWPQ. The caller removes the line from the cache right after,
    /// within the same atomic step as the insert.
    pub fn premature_flush(
        &mut self,
        home: Address,
        data: &LineBytes,
        tx_id: u32,
        clock: &mut Clock,
        crash: &mut CrashCtl,
    ) -> SimResult<()> {
        if self.log_head - self.log_tail >= self.log_cap {
            self.gc(clock, crash, true)?;
            if self.log_head - self.log_tail >= self.log_cap {
                return Err(SimError::SimFault(format!(
                    "log zone full: head {} tail {} capacity {}",
                    self.log_head, self.log_tail, self.log_cap
                )));
            }
        }
        if self.cap.is_some_and(|c| self.ewpq_valid() >= c) && self.ext_free.is_empty() {
            // Committed mappings only wait for the next scan; reclaim them now.
            self.migration_scan(clock, crash)?;
        }
        if self.cap.is_some_and(|c| self.ewpq_valid() >= c) {
            self.spill(clock, crash)?;
        }
        let idx = self.log_head;
        let slot = self.log_slot(idx);
        crash.point(EventKind::LogHeadAdvance)?;
        self.log_head += 1;
        crash.point(EventKind::LogEntryWrite)?;
        self.pmem.write_log_entry(slot, LogEntry { data: *data, home, tx_id, tx_state: TxState::Uncommitted });
        self.core_write(self.pmem.layout().log_addr(slot) / LINE_BYTES, clock);
        crash.point(EventKind::EwpqInsert)?;
        let s = self.alloc_ewpq_slot().expect("slot freed by spill");
        let enc = EwpqEntry { tx_state: TxState::Uncommitted, tx_id_lo: truncate_tx(tx_id), home_lo: truncate_home(home), log_lo: slot }
            .encode();
        self.lru_clock += 1;
        self.slots[s as usize] = Some(Slot { enc, lru: self.lru_clock, log_idx: idx });
        let loc = Loc::Ewpq(s);
        self.by_home.entry(truncate_home(home)).or_default().push(loc);
        self.by_tx.entry(tx_id).or_default().push(loc);
        self.by_log.insert(idx, loc);
        self.live.insert(idx);
        self.counters.premature_flushes += 1;
        Ok(())
    }

    /// Runs GC when the log window exceeds the threshold.
    pub fn maybe_gc(&mut self, clock: &mut Clock, crash: &mut CrashCtl) -> SimResult<Option<GcReport>> {
        if self.log_head - self.log_tail > self.gc_threshold {
            self.gc(clock, crash, false).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Valid, uncommitted entry of `loc` belongs to `tx`?
    fn owned_by(&self, loc: Loc, tx_id: u32) -> Option<EwpqEntry> {
        let e = self.entry_at(loc)?;
        if e.tx_state != TxState::Uncommitted || e.tx_id_lo != truncate_tx(tx_id) {
            return None;
        }
        let log = self.pmem.log_entry(e.log_lo)?;
        (log.tx_id == tx_id).then_some(e)
    }

    fn tx_locs(&mut self, tx_id: u32) -> Vec<Loc> {
        let mut locs = self.by_tx.remove(&tx_id).unwrap_or_default();
        locs.sort_unstable_by_key(|l| match l {
            Loc::Ewpq(s) => (0, *s),
            Loc::Ext(s) => (1, *s),
        });
        locs.dedup();
        locs
    }

    /// Toggles every mapping of `tx_id` (and its log entry header) to committed.
    pub fn commit_offchip(&mut self, tx_id: u32, clock: &mut Clock, crash: &mut CrashCtl) -> SimResult<u64> {
        let locs = self.tx_locs(tx_id);
        let mut n = 0;
        for (i, &loc) in locs.iter().enumerate() {
            let Some(mut e) = self.owned_by(loc, tx_id) else { continue };
            if let Err(c) = crash.point(EventKind::EwpqToggle) {
                self.by_tx.insert(tx_id, locs[i..].to_vec());
                return Err(c.into());
            }
            e.tx_state = TxState::Committed;
            match loc {
                Loc::Ewpq(s) => {
                    if let Some(x) = self.slots[s as usize].as_mut() {
                        x.enc = e.encode();
                    }
                }
                Loc::Ext(s) => {
                    self.pmem.write_extension(s, Some(e.encode()));
                    self.wpq.submit_background(clock.now());
                }
            }
            self.pmem.set_log_entry_state(e.log_lo, TxState::Committed);
            self.wpq.submit_background(clock.now());
            n += 1;
        }
        self.counters.offchip_commits += n;
        Ok(n)
    }

    /// Invalidates every mapping of an aborted transaction.
    pub fn abort_offchip(&mut self, tx_id: u32, crash: &mut CrashCtl) -> SimResult<u64> {
        let locs = self.tx_locs(tx_id);
        let mut n = 0;
        for (i, &loc) in locs.iter().enumerate() {
            if self.owned_by(loc, tx_id).is_none() {
                continue;
            }
            if let Err(c) = crash.point(EventKind::EwpqNullify) {
                self.by_tx.insert(tx_id, locs[i..].to_vec());
                return Err(c.into());
            }
            self.invalidate(loc);
            n += 1;
        }
        self.counters.offchip_aborts += n;
        Ok(n)
    }

    /// Number of valid uncommitted mappings owned by `tx_id`.
    pub fn uncommitted_of(&self, tx_id: u32) -> usize {
        self.by_tx.get(&tx_id).map_or(0, |v| {
            let mut v = v.clone();
            v.sort_unstable_by_key(|l| match l {
                Loc::Ewpq(s) => (0, *s),
                Loc::Ext(s) => (1, *s),
            });
            v.dedup();
            v.into_iter().filter(|l| self.owned_by(*l, tx_id).is_some()).count()
        })
    }

    // ---- migration and GC -------------------------------------------------

    fn migrate(&mut self, loc: Loc, crash: &mut CrashCtl, clock: &mut Clock) -> SimResult<()> {
        let e = self.entry_at(loc).expect("valid mapping");
        crash.point(EventKind::Migration)?;
        let log = self.pmem.read_log_entry(e.log_lo).expect("mapped log entry exists");
        self.pmem.write_home(log.home, &log.data);
        self.wpq.submit_background(clock.now());
        crash.point(EventKind::ValidityClear)?;
        self.invalidate(loc);
        self.counters.migrations += 1;
        Ok(())
    }

    fn advance_tail(&mut self, from: u64, crash: &mut CrashCtl) -> SimResult<()> {
        let next = self.live.range(from..).next().copied().unwrap_or(self.log_head).max(self.log_tail);
        if next != self.log_tail {
            crash.point(EventKind::LogTailAdvance)?;
            self.log_tail = next;
        }
        Ok(())
    }

    /// Copies every committed mapping home via non-temporal stores.
    pub fn migration_scan(&mut self, clock: &mut Clock, crash: &mut CrashCtl) -> SimResult<u64> {
        self.counters.migration_scans += 1;
        let committed: Vec<Loc> = self
            .mappings()
            .into_iter()
            .filter(|(_, e)| e.tx_state == TxState::Committed)
            .map(|(l, _)| l)
            .collect();
        let mut n = 0;
        for loc in committed {
            self.migrate(loc, crash, clock)?;
            n += 1;
        }
        let tail = self.log_tail;
        self.advance_tail(tail, crash)?;
        Ok(n)
    }

    /// Log-entry garbage collection. With `force`, one pass runs even below
    /// the threshold.
    pub fn gc(&mut self, clock: &mut Clock, crash: &mut CrashCtl, force: bool) -> SimResult<GcReport> {
        self.counters.gc_runs += 1;
        let mut rep = GcReport::default();
        let mut first = true;
        while (force && first) || self.log_head - self.log_tail > self.gc_threshold {
            first = false;
            let before = self.log_head - self.log_tail;
            // Nothing reclaimable: every slot in the window holds a live
            // uncommitted entry.
            if before == 0 || (before as usize <= self.live.len() && !self.any_committed_live()) {
                break;
            }
            let start = self.log_tail;
            let end = (start + self.gc_chunk).min(self.log_head);
            let chunk: Vec<u64> = self.live.range(start..end).copied().collect();
            rep.entries_scanned += end - start;
            for idx in chunk {
                let loc = self.by_log[&idx];
                let e = self.entry_at(loc).expect("live index has a mapping");
                if e.tx_state == TxState::Committed {
                    self.migrate(loc, crash, clock)?;
                    rep.entries_migrated += 1;
                    continue;
                }
                if self.log_head - self.log_tail >= self.log_cap {
                    return Err(SimError::SimFault("log zone full during garbage collection".into()));
                }
                let dst = self.log_head;
                let dst_slot = self.log_slot(dst);
                crash.point(EventKind::GcCopy)?;
                let log = self.pmem.read_log_entry(e.log_lo).expect("mapped log entry exists");
                self.pmem.write_log_entry(dst_slot, log);
                self.wpq.submit_background(clock.now());
                crash.point(EventKind::GcRemap)?;
                let moved = EwpqEntry { log_lo: dst_slot, ..e }.encode();
                match loc {
                    Loc::Ewpq(s) => {
                        let x = self.slots[s as usize].as_mut().expect("valid");
                        x.enc = moved;
                        x.log_idx = dst;
                    }
                    Loc::Ext(s) => {
                        self.pmem.write_extension(s, Some(moved));
                        self.ext_log_idx[s as usize] = dst;
                        self.wpq.submit_background(clock.now());
                    }
                }
                self.live.remove(&idx);
                self.by_log.remove(&idx);
                self.live.insert(dst);
                self.by_log.insert(dst, loc);
                crash.point(EventKind::LogHeadAdvance)?;
                self.log_head += 1;
                rep.entries_moved += 1;
            }
            self.advance_tail(end, crash)?;
        }
        rep.new_log_tail = self.log_tail;
        self.counters.gc_moved += rep.entries_moved;
        self.counters.gc_migrated += rep.entries_migrated;
        Ok(rep)
    }

    // ---- power-off ----------------------------------------------------------

    /// Persists LogHead/LogTail and the valid eWPQ entries.
    pub fn save_state(&mut self) {
        self.wpq.clear();
        self.pmem.save_registers(self.log_head, self.log_tail);
        self.pmem.clear_saved_ewpq();
        let entries: Vec<(u32, u64)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i as u32, s.enc)))
            .collect();
        for (i, enc) in entries {
            self.pmem.save_ewpq_entry(i, enc);
        }
    }

    /// Checks mapping soundness and window containment.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (loc, e) in self.mappings() {
            let log = self.pmem.log_entry(e.log_lo).ok_or(format!("{loc:?}: log slot {} empty", e.log_lo))?;
            if log.tx_state != e.tx_state {
                return Err(format!("{loc:?}: state differs from log entry"));
            }
            if truncate_home(log.home) != e.home_lo {
                return Err(format!("{loc:?}: home_lo mismatch"));
            }
            let idx = self.log_idx_at(loc);
            if idx < self.log_tail || idx >= self.log_head {
                return Err(format!("{loc:?}: log index {idx} outside [{}, {})", self.log_tail, self.log_head));
            }
            if self.log_slot(idx) != e.log_lo {
                return Err(format!("{loc:?}: log_lo does not match index"));
            }
        }
        if self.live.len() != self.valid_mappings() {
            return Err("live index set out of sync".into());
        }
        Ok(())
    }

    pub fn entry_bytes() -> u64 {
        EWPQ_ENTRY_BYTES
    }

    pub fn log_entry_bytes() -> u64 {
        LOG_ENTRY_BYTES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(cfg: &SimConfig) -> MemoryController {
        MemoryController::new(cfg, PmemDevice::new(cfg).unwrap())
    }

    fn small() -> SimConfig {
        let mut c = SimConfig::stress();
        c.ewpq_entries = 4;
        c
    }

    fn line(i: u64) -> Address {
        Address(0x10_0000 + i * 64)
    }

    #[test]
    fn encoding_round_trips_and_is_64_bits() {
        let e = EwpqEntry { tx_state: TxState::Uncommitted, tx_id_lo: 0x1F_FFFF, home_lo: 5, log_lo: 0x10_0001 };
        assert_eq!(EwpqEntry::decode(e.encode()), e);
        assert_eq!(SimConfig::default().ewpq_entries * EWPQ_ENTRY_BYTES, 4096);
    }

    #[test]
    fn first_flush_uses_entry_zero() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        m.premature_flush(line(0), &[1; 64], 3, &mut clk, &mut cr).unwrap();
        assert_eq!(m.log_head(), 1);
        assert!(m.pmem.log_entry(0).is_some());
        assert_eq!(m.pmem.counters().written(crate::pmem::PmemArea::Log), 80);
        m.check_invariants().unwrap();
    }

    #[test]
    fn full_ewpq_spills_exactly_once() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        for i in 0..5 {
            m.premature_flush(line(i), &[i as u8; 64], 1, &mut clk, &mut cr).unwrap();
        }
        assert_eq!(m.counters.spills, 1);
        assert_eq!(m.extension_valid(), 1);
        // the spilled entry is the LRU one: line 0
        match m.lookup(line(0), Some(1), &mut clk) {
            Lookup::HitLog(h) => assert!(matches!(h.loc, Loc::Ext(_))),
            other => panic!("{other:?}"),
        }
        m.check_invariants().unwrap();
    }

    #[test]
    fn lookup_rules() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        m.premature_flush(line(0), &[9; 64], 1, &mut clk, &mut cr).unwrap();
        assert!(matches!(m.lookup(line(0), Some(1), &mut clk), Lookup::HitLog(_)));
        assert_eq!(m.lookup(line(0), Some(2), &mut clk), Lookup::Forbidden { owner: 1 });
        assert_eq!(m.lookup(line(0), None, &mut clk), Lookup::Forbidden { owner: 1 });
        assert_eq!(m.lookup(line(1), None, &mut clk), Lookup::Miss);
        m.commit_offchip(1, &mut clk, &mut cr).unwrap();
        match m.lookup(line(0), Some(7), &mut clk) {
            Lookup::HitLog(h) => assert_eq!(h.tx_state, TxState::Committed),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn search_cost_charged() {
        let cfg = small();
        let mut m = mc(&cfg);
        let mut clk = Clock::new();
        m.lookup(line(0), None, &mut clk);
        assert_eq!(clk.now(), cfg.ewpq_search_cycles);
    }

    #[test]
    fn truncation_collision_falls_back_to_full_address() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        let a = line(0);
        let b = Address(a.0 + (1u64 << 21) * 64);
        assert_eq!(truncate_home(a), truncate_home(b));
        m.premature_flush(a, &[1; 64], 1, &mut clk, &mut cr).unwrap();
        assert_eq!(m.lookup(b, Some(1), &mut clk), Lookup::Miss);
        assert_eq!(m.counters.truncation_collisions, 1);
    }

    #[test]
    fn migration_scan_moves_committed_only() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        m.premature_flush(line(0), &[5; 64], 1, &mut clk, &mut cr).unwrap();
        m.premature_flush(line(1), &[6; 64], 2, &mut clk, &mut cr).unwrap();
        assert_eq!(m.migration_scan(&mut clk, &mut cr).unwrap(), 0);
        m.commit_offchip(1, &mut clk, &mut cr).unwrap();
        let before = m.pmem.counters().clone();
        assert_eq!(m.migration_scan(&mut clk, &mut cr).unwrap(), 1);
        assert_eq!(m.pmem.peek_home(line(0)), [5; 64]);
        let after = m.pmem.counters();
        assert_eq!(after.written(crate::pmem::PmemArea::Home) - before.written(crate::pmem::PmemArea::Home), 64);
        assert_eq!(after.bytes_read - before.bytes_read, 80);
        assert_eq!(m.log_tail(), 1);
        m.check_invariants().unwrap();
    }

    #[test]
    fn spill_then_commit_toggles_extension_record() {
        let cfg = small();
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        for i in 0..6 {
            m.premature_flush(line(i), &[1; 64], 4, &mut clk, &mut cr).unwrap();
        }
        assert_eq!(m.commit_offchip(4, &mut clk, &mut cr).unwrap(), 6);
        assert!(m.mappings().iter().all(|(_, e)| e.tx_state == TxState::Committed));
        assert_eq!(m.migration_scan(&mut clk, &mut cr).unwrap(), 6);
        assert_eq!(m.valid_mappings(), 0);
        assert_eq!(m.log_tail(), m.log_head());
    }

    #[test]
    fn gc_all_invalid_chunk_slides_tail() {
        let mut cfg = small();
        cfg.gc_threshold = 1;
        cfg.gc_chunk = 4;
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        for i in 0..4 {
            m.premature_flush(line(i), &[1; 64], 1, &mut clk, &mut cr).unwrap();
        }
        m.abort_offchip(1, &mut cr).unwrap();
        let r = m.gc(&mut clk, &mut cr, true).unwrap();
        assert_eq!(r.entries_moved, 0);
        assert_eq!(r.new_log_tail, 4);
    }

    #[test]
    fn gc_moves_uncommitted_to_head() {
        let mut cfg = small();
        cfg.gc_threshold = 2;
        cfg.gc_chunk = 2;
        let mut m = mc(&cfg);
        let (mut clk, mut cr) = (Clock::new(), CrashCtl::new());
        m.premature_flush(line(0), &[1; 64], 1, &mut clk, &mut cr).unwrap();
        for i in 1..4 {
            m.premature_flush(line(i), &[2; 64], 2, &mut clk, &mut cr).unwrap();
        }
        m.abort_offchip(2, &mut cr).unwrap();
        let r = m.gc(&mut clk, &mut cr, true).unwrap();
        assert_eq!(r.entries_moved, 1);
        assert_eq!(m.log_head(), 5);
        assert_eq!(m.log_tail(), 4);
        match m.lookup(line(0), Some(1), &mut clk) {
            Lookup::HitLog(h) => assert_eq!(h.log_slot, 4),
            other => panic!("{other:?}"),
        }
        m.check_invariants().unwrap();
    }

    #[test]
    fn wpq_stalls_only_when_full() {
        let mut w = Wpq::new(2, 300);
        assert_eq!(w.submit(0, 1).0, 0);
        assert_eq!(w.submit(0, 2).0, 0);
        // third distinct line waits for the first drain
        assert_eq!(w.submit(0, 3).0, 300);
    }

    #[test]
    fn wpq_combines_waiting_line() {
        let mut w = Wpq::new(4, 300);
        w.submit(0, 1);
        w.submit(0, 2);
        let (_, combined) = w.submit(10, 2);
        assert!(combined);
        let (_, combined) = w.submit(10, 1);
        assert!(!combined, "line 1 is already draining");
    }
}
