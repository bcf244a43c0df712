//! The simulated machine: private L1D/L2 per core, a shared LLC and the
//! memory controller, plus the load/store paths that move lines between them.
//!
//! Transactional lines are exclusive: an uncommitted line lives in exactly
//! one level, and any older non-transactional copy sits strictly below it.
//! Every call to [`CrashCtl::point`] happens while those rules hold, so a
//! crash can be injected there.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::addr::{Address, LineBytes, LINE_BYTES};
use crate::cache::{Cache, LevelCounters, TxState};
use crate::clock::Clock;
use crate::config::SimConfig;
use crate::error::{SimError, SimResult};
use crate::event::{CrashCtl, EventKind};
use crate::mc::{GcReport, Lookup, MemoryController};
use crate::pmem::PmemDevice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    Llc,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::Llc];

    pub fn next(self) -> Option<Level> {
        match self {
            Level::L1 => Some(Level::L2),
            Level::L2 => Some(Level::Llc),
            Level::Llc => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-core transactional registers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreRegs {
    pub tx_id: Option<u32>,
    pub tx_len: u32,
}

#[derive(Clone, Debug)]
pub struct Core {
    pub l1: Cache,
    pub l2: Cache,
    pub regs: CoreRegs,
    pub instructions: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TxStatus {
    Active,
    Aborted,
}

#[derive(Clone, Debug)]
pub(crate) struct TxTrack {
    pub status: TxStatus,
    /// Cores whose private caches may hold this transaction's lines.
    pub cores: u64,
    pub lines: Vec<u64>,
    pub seen: FxHashSet<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineCounters {
    pub instructions: u64,
    pub loads: u64,
    pub stores: u64,
    pub tx_started: u64,
    pub tx_committed: u64,
    pub tx_aborted: u64,
    pub forced_transactional_evictions: u64,
    pub isolation_aborts: u64,
    pub conflict_aborts: u64,
    pub tags_toggled: u64,
    pub state_reset_cycles: u64,
    pub original_copy_reads: u64,
}

enum Fill {
    Resident(usize, usize),
    Original(LineBytes),
}

enum Conflict {
    ServeOriginal,
    Proceed,
}

#[derive(Clone, Debug)]
pub struct Machine {
    pub(crate) cfg: SimConfig,
    pub(crate) cores: Vec<Core>,
    pub(crate) clocks: Vec<Clock>,
    pub(crate) llc: Cache,
    pub mc: MemoryController,
    pub crash: CrashCtl,
    pub counters: MachineCounters,
    /// TransTags, eWPQ lookups and the tag-latency penalty are active.
    pub(crate) hercules: bool,
    pub(crate) global_tx_id: u64,
    pub(crate) txs: FxHashMap<u32, TxTrack>,
    pub(crate) live_txs: usize,
    cores_used: u64,
    next_scan: u64,
    penalty: [u64; 3],
    read_cycles: u64,
}

impl Machine {
    /// A machine over a fresh, zeroed pmem device.
    pub fn new(cfg: &SimConfig, hercules: bool) -> SimResult<Self> {
        cfg.validate()?;
        let pmem = PmemDevice::new(cfg)?;
        Ok(Self::with_pmem(cfg, pmem, hercules))
    }

    /// A machine booting over existing pmem contents. Recovery, if needed,
    /// must already have run (see [`crate::crash::boot`]).
    pub fn with_pmem(cfg: &SimConfig, pmem: PmemDevice, hercules: bool) -> Self {
        let core = Core {
            l1: Cache::new(cfg.l1()),
            l2: Cache::new(cfg.l2()),
            regs: CoreRegs::default(),
            instructions: 0,
        };
        let penalty = [cfg.l1(), cfg.l2(), cfg.llc()]
            .map(|l| if hercules && l.tags_per_set() > 0 { l.penalty_permille() } else { 0 });
        Machine {
            cores: vec![core; cfg.core_count as usize],
            clocks: vec![Clock::new(); cfg.core_count as usize],
            llc: Cache::new(cfg.llc()),
            mc: MemoryController::new(cfg, pmem),
            crash: CrashCtl::new(),
            counters: MachineCounters::default(),
            hercules,
            global_tx_id: 0,
            txs: FxHashMap::default(),
            live_txs: 0,
            cores_used: 0,
            next_scan: cfg.migration_scan_period_instructions,
            penalty,
            read_cycles: cfg.pmem_read_cycles(),
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn is_hercules(&self) -> bool {
        self.hercules
    }

    pub fn core_count(&self) -> usize {
        self.cores.len()
    }

    pub fn clock(&self, core: usize) -> u64 {
        self.clocks[core].now()
    }

    /// Latest clock over all cores.
    pub fn elapsed_cycles(&self) -> u64 {
        self.clocks.iter().map(Clock::now).max().unwrap_or(0)
    }

    /// Moves `core` forward to `t` (used for lock hand-off between threads).
    pub fn wait_until(&mut self, core: usize, t: u64) {
        self.clocks[core].advance_to(t);
    }

    pub fn regs(&self, core: usize) -> CoreRegs {
        self.cores[core].regs
    }

    pub fn global_tx_id(&self) -> u64 {
        self.global_tx_id
    }

    pub fn pmem(&self) -> &PmemDevice {
        &self.mc.pmem
    }

    pub fn pmem_mut(&mut self) -> &mut PmemDevice {
        &mut self.mc.pmem
    }

    pub fn cache(&self, core: usize, lvl: Level) -> &Cache {
        match lvl {
            Level::L1 => &self.cores[core].l1,
            Level::L2 => &self.cores[core].l2,
            Level::Llc => &self.llc,
        }
    }

    fn cache_mut(&mut self, core: usize, lvl: Level) -> &mut Cache {
        match lvl {
            Level::L1 => &mut self.cores[core].l1,
            Level::L2 => &mut self.cores[core].l2,
            Level::Llc => &mut self.llc,
        }
    }

    /// Access counters per level, summed over cores.
    pub fn level_counters(&self) -> [LevelCounters; 3] {
        let mut out = [LevelCounters::default(); 3];
        for c in &self.cores {
            for (i, cache) in [&c.l1, &c.l2].into_iter().enumerate() {
                out[i].accesses += cache.counters.accesses;
                out[i].hits += cache.counters.hits;
                out[i].misses += cache.counters.misses;
            }
        }
        out[2] = self.llc.counters;
        out
    }

    // ---- instruction accounting ---------------------------------------------

    fn tick(&mut self, core: usize, n: u64) -> SimResult<()> {
        self.cores[core].instructions += n;
        self.counters.instructions += n;
        if self.hercules && self.counters.instructions >= self.next_scan {
            self.next_scan = self.counters.instructions + self.cfg.migration_scan_period_instructions;
            self.mc.migration_scan(&mut self.clocks[core], &mut self.crash)?;
        }
        Ok(())
    }

    /// Non-memory work: `cycles` single-cycle instructions.
    pub fn compute(&mut self, core: usize, cycles: u64) -> SimResult<()> {
        self.clocks[core].advance(cycles);
        self.tick(core, cycles)
    }

    fn charge(&mut self, core: usize, lvl: Level) {
        let cycles = self.cache(core, lvl).config().access_cycles;
        self.clocks[core].advance(cycles);
    }

    /// Extra tag latency of an access involving a TransTag at `lvl`.
    fn charge_tag(&mut self, core: usize, lvl: Level) {
        let p = self.penalty[lvl.index()];
        if p > 0 {
            let cycles = self.cache(core, lvl).config().access_cycles;
            self.clocks[core].advance_permille(cycles, p);
        }
    }

    // ---- transactions as seen by the access path ------------------------------

    /// Active transaction of `core`, or an error if it was aborted underneath.
    pub(crate) fn current_tx(&self, core: usize) -> SimResult<Option<u32>> {
        match self.cores[core].regs.tx_id {
            None => Ok(None),
            Some(t) => match self.txs.get(&t).map(|x| x.status) {
                Some(TxStatus::Active) => Ok(Some(t)),
                _ => Err(SimError::TxAborted(t)),
            },
        }
    }

    fn uncommitted_at(&self, core: usize, lvl: Level, line: Address) -> Option<u32> {
        let c = self.cache(core, lvl);
        c.find(line).and_then(|(s, w)| c.uncommitted_tx(s, w))
    }

    fn foreign_owner(&self, core: usize, line: Address, tx: Option<u32>) -> Option<u32> {
        let others_live = match tx {
            Some(_) => self.live_txs > 1,
            None => self.live_txs > 0,
        };
        if !others_live {
            return None;
        }
        let foreign = |t: u32| (Some(t) != tx).then_some(t);
        for c in 0..self.cores.len() {
            if c != core && self.cores_used & (1 << c) == 0 {
                continue;
            }
            for lvl in [Level::L1, Level::L2] {
                if let Some(t) = self.uncommitted_at(c, lvl, line).and_then(foreign) {
                    return Some(t);
                }
            }
        }
        self.uncommitted_at(core, Level::Llc, line).and_then(foreign)
    }

    fn resolve_conflict(
        &mut self,
        line: Address,
        tx: Option<u32>,
        owner: u32,
        is_write: bool,
    ) -> SimResult<Conflict> {
        let abort_on_conflict = self.cfg.isolation_abort_on_conflict;
        if !is_write {
            if let (Some(me), true) = (tx, abort_on_conflict) {
                self.abort_tx(me)?;
                self.counters.isolation_aborts += 1;
                return Err(SimError::IsolationViolation { addr: line, requester: me, owner });
            }
            return Ok(Conflict::ServeOriginal);
        }
        if abort_on_conflict {
            self.abort_tx(owner)?;
            self.counters.conflict_aborts += 1;
            Ok(Conflict::Proceed)
        } else {
            Err(SimError::TxConflict { addr: line, owner })
        }
    }

    // ---- loads and stores ------------------------------------------------------

    pub fn load(&mut self, core: usize, addr: Address, buf: &mut [u8]) -> SimResult<()> {
        check_span(addr, buf.len())?;
        let data = self.access(core, addr, None)?;
        buf.copy_from_slice(&data[addr.offset()..addr.offset() + buf.len()]);
        self.counters.loads += 1;
        Ok(())
    }

    pub fn store(&mut self, core: usize, addr: Address, bytes: &[u8]) -> SimResult<()> {
        check_span(addr, bytes.len())?;
        self.access(core, addr, Some(bytes))?;
        self.counters.stores += 1;
        Ok(())
    }

    pub fn load_u64(&mut self, core: usize, addr: u64) -> SimResult<u64> {
        let mut b = [0u8; 8];
        self.load(core, Address(addr), &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn store_u64(&mut self, core: usize, addr: u64, v: u64) -> SimResult<()> {
        self.store(core, Address(addr), &v.to_le_bytes())
    }

    fn access(&mut self, core: usize, addr: Address, write: Option<&[u8]>) -> SimResult<LineBytes> {
        if core >= self.cores.len() {
            return Err(SimError::Invalid(format!("core {core} out of range")));
        }
        let line = addr.line();
        let tx = self.current_tx(core)?;
        self.tick(core, 1)?;
        self.cores_used |= 1 << core;
        let is_write = write.is_some();
        if let Some(owner) = self.foreign_owner(core, line, tx) {
            if let Conflict::ServeOriginal = self.resolve_conflict(line, tx, owner, is_write)? {
                return Ok(self.read_original(core, line));
            }
        }
        if self.cores_used.count_ones() > 1 {
            self.snoop(core, line, is_write)?;
        }
        let (set, way) = match self.bring_to_l1(core, line, tx, is_write)? {
            Fill::Resident(s, w) => (s, w),
            Fill::Original(d) => return Ok(d),
        };
        let Some(bytes) = write else {
            return Ok(self.cores[core].l1.line(set, way).data);
        };
        let off = addr.offset();
        match tx {
            None => {
                self.crash.point(EventKind::Store)?;
                let l = self.cores[core].l1.line_mut(set, way);
                l.data[off..off + bytes.len()].copy_from_slice(bytes);
                l.dirty = true;
            }
            Some(t) if self.cores[core].l1.uncommitted_tx(set, way) == Some(t) => {
                self.crash.point(EventKind::Store)?;
                let l = self.cores[core].l1.line_mut(set, way);
                l.data[off..off + bytes.len()].copy_from_slice(bytes);
            }
            Some(t) => self.tag_and_write(core, set, way, t, off, bytes)?,
        }
        if let Some(t) = tx {
            let track = self.txs.get_mut(&t).expect("active tx is tracked");
            track.cores |= 1 << core;
            if track.seen.insert(line.0) {
                track.lines.push(line.0);
                self.cores[core].regs.tx_len = track.lines.len() as u32;
            }
        }
        Ok(self.cores[core].l1.line(set, way).data)
    }

    /// First transactional write to a resident, non-transactional L1 line:
    /// push an older dirty version one level down, then claim a TransTag.
    fn tag_and_write(&mut self, core: usize, set: usize, way: usize, t: u32, off: usize, bytes: &[u8]) -> SimResult<()> {
        self.ensure_tag(core, Level::L1, set)?;
        self.charge_tag(core, Level::L1);
        let line = self.cores[core].l1.addr_of(set, way);
        let dirty = self.cores[core].l1.line(set, way).dirty;
        let mut push_to = None;
        if dirty {
            push_to = Some(match self.cores[core].l2.find(line) {
                Some((s2, w2)) => (s2, w2, true),
                None => {
                    let s2 = self.cores[core].l2.set_of(line);
                    (s2, self.make_room(core, Level::L2, s2, false)?, false)
                }
            });
        }
        self.crash.point(EventKind::Store)?;
        let c = &mut self.cores[core];
        if let Some((s2, w2, present)) = push_to {
            let older = c.l1.line(set, way).data;
            if present {
                let l = c.l2.line_mut(s2, w2);
                l.data = older;
                l.dirty = true;
                c.l2.touch(s2, w2);
            } else {
                c.l2.place(s2, w2, line, older, true, None);
            }
        }
        let ok = c.l1.claim_tag(set, way, t);
        debug_assert!(ok);
        let l = c.l1.line_mut(set, way);
        l.dirty = true;
        l.data[off..off + bytes.len()].copy_from_slice(bytes);
        c.l1.touch(set, way);
        Ok(())
    }

    /// Makes `line` resident in L1 of `core` (or returns the original copy
    /// when a conflicting transaction owns it and the caller only reads).
    fn bring_to_l1(&mut self, core: usize, line: Address, tx: Option<u32>, is_write: bool) -> SimResult<Fill> {
        let mut first = true;
        'retry: loop {
            let lvls = [Level::L1, Level::L2, Level::Llc];
            for lvl in lvls {
                if first {
                    self.charge(core, lvl);
                    self.cache_mut(core, lvl).counters.accesses += 1;
                }
                let found = self.cache(core, lvl).find(line);
                if first && found.is_some_and(|(s, w)| self.cache(core, lvl).uncommitted_tx(s, w).is_some()) {
                    self.charge_tag(core, lvl);
                }
                if first {
                    let ctr = &mut self.cache_mut(core, lvl).counters;
                    if found.is_some() {
                        ctr.hits += 1;
                    } else {
                        ctr.misses += 1;
                    }
                }
                let Some((s, w)) = found else { continue };
                if lvl == Level::L1 {
                    self.cores[core].l1.touch(s, w);
                    return Ok(Fill::Resident(s, w));
                }
                first = false;
                match self.fill_from(core, lvl, s, w, line)? {
                    Some(f) => return Ok(f),
                    // The source moved while room was made above it.
                    None => continue 'retry,
                }
            }
            return self.fill_from_memory(core, line, tx, is_write);
        }
    }

    /// Fill from a lower cache level. `None` means the source line moved
    /// while room was being made and the lookup must be repeated.
    fn fill_from(&mut self, core: usize, lvl: Level, s: usize, w: usize, line: Address) -> SimResult<Option<Fill>> {
        let c = self.cache(core, lvl);
        if let Some(t) = c.uncommitted_tx(s, w) {
            // Own transactional line: move it up, exclusively.
            let s1 = self.cores[core].l1.set_of(line);
            let w1 = self.make_room(core, Level::L1, s1, true)?;
            let Some((s, w)) = self.cache(core, lvl).find(line) else { return Ok(None) };
            if self.cache(core, lvl).uncommitted_tx(s, w) != Some(t) {
                return Ok(None);
            }
            let e = self.cache_mut(core, lvl).take(s, w);
            self.cores[core].l1.place(s1, w1, line, e.data, true, Some(t));
            return Ok(Some(Fill::Resident(s1, w1)));
        }
        let data = c.line(s, w).data;
        if lvl == Level::Llc {
            let s2 = self.cores[core].l2.set_of(line);
            if self.cores[core].l2.find(line).is_none() {
                let w2 = self.make_room(core, Level::L2, s2, false)?;
                self.cores[core].l2.place(s2, w2, line, data, false, None);
            }
        }
        let s1 = self.cores[core].l1.set_of(line);
        let w1 = self.make_room(core, Level::L1, s1, false)?;
        self.cores[core].l1.place(s1, w1, line, data, false, None);
        Ok(Some(Fill::Resident(s1, w1)))
    }

    fn fill_from_memory(&mut self, core: usize, line: Address, tx: Option<u32>, is_write: bool) -> SimResult<Fill> {
        let mut data = None;
        if self.hercules {
            match self.mc.lookup(line, tx, &mut self.clocks[core]) {
                Lookup::HitLog(h) if h.tx_state == TxState::Uncommitted => {
                    self.clocks[core].advance(self.read_cycles);
                    let s1 = self.cores[core].l1.set_of(line);
                    let w1 = self.make_room(core, Level::L1, s1, true)?;
                    self.mc.nullify(h.loc, &mut self.crash)?;
                    self.cores[core].l1.place(s1, w1, line, h.data, true, Some(h.tx_id));
                    return Ok(Fill::Resident(s1, w1));
                }
                Lookup::HitLog(h) => data = Some((h.data, Some(h.loc))),
                Lookup::Forbidden { owner } => match self.resolve_conflict(line, tx, owner, is_write)? {
                    Conflict::ServeOriginal => {
                        self.counters.original_copy_reads += 1;
                        self.clocks[core].advance(self.read_cycles);
                        return Ok(Fill::Original(self.mc.pmem.read_home(line)));
                    }
                    Conflict::Proceed => return self.fill_from_memory(core, line, tx, is_write),
                },
                Lookup::Miss => {}
            }
        }
        self.clocks[core].advance(self.read_cycles);
        let (data, loc) = match data {
            Some(d) => d,
            None => (self.mc.pmem.read_home(line), None),
        };
        let s3 = self.llc.set_of(line);
        let w3 = self.make_room(core, Level::Llc, s3, false)?;
        if let Some(loc) = loc {
            self.mc.nullify(loc, &mut self.crash)?;
        }
        self.llc.place(s3, w3, line, data, loc.is_some(), None);
        let s2 = self.cores[core].l2.set_of(line);
        let w2 = self.make_room(core, Level::L2, s2, false)?;
        self.cores[core].l2.place(s2, w2, line, data, false, None);
        let s1 = self.cores[core].l1.set_of(line);
        let w1 = self.make_room(core, Level::L1, s1, false)?;
        self.cores[core].l1.place(s1, w1, line, data, false, None);
        Ok(Fill::Resident(s1, w1))
    }

    /// Write-invalidate / migratory handling of copies in other cores.
    fn snoop(&mut self, core: usize, line: Address, is_write: bool) -> SimResult<()> {
        for o in 0..self.cores.len() {
            if o == core || self.cores_used & (1 << o) == 0 {
                continue;
            }
            for lvl in [Level::L1, Level::L2] {
                let c = self.cache(o, lvl);
                let Some((s, w)) = c.find(line) else { continue };
                if let Some(t) = c.uncommitted_tx(s, w) {
                    // The owning thread migrated here; pull its line down to
                    // the shared level. From L1 it lands in L2 and is picked
                    // up on the next iteration.
                    self.demote_tx(core, o, lvl, s, w, t)?;
                    if lvl == Level::L2 {
                        continue;
                    }
                    let c2 = self.cache(o, Level::L2);
                    if let Some((s2, w2)) = c2.find(line) {
                        if let Some(t) = c2.uncommitted_tx(s2, w2) {
                            self.demote_tx(core, o, Level::L2, s2, w2, t)?;
                        }
                    }
                    break;
                } else if c.line(s, w).dirty {
                    self.writeback_down(core, o, lvl, s, w)?;
                } else if is_write {
                    self.cache_mut(o, lvl).take(s, w);
                }
            }
        }
        Ok(())
    }

    // ---- eviction machinery --------------------------------------------------

    /// Frees a way in `set` of `lvl` (and a TransTag when `incoming_tx`).
    fn make_room(&mut self, core: usize, lvl: Level, set: usize, incoming_tx: bool) -> SimResult<usize> {
        self.make_room_as(core, core, lvl, set, incoming_tx)
    }

    /// `payer` is the core whose clock absorbs stalls; `owner` owns the
    /// private caches being modified.
    fn make_room_as(&mut self, payer: usize, owner: usize, lvl: Level, set: usize, incoming_tx: bool) -> SimResult<usize> {
        loop {
            let v = self.cache(owner, lvl).select_victim(set, incoming_tx);
            match v.kind {
                crate::cache::VictimKind::Invalid => return Ok(v.way),
                crate::cache::VictimKind::ForcedTransactional => self.counters.forced_transactional_evictions += 1,
                _ => {}
            }
            self.evict_way(payer, owner, lvl, set, v.way)?;
        }
    }

    fn ensure_tag(&mut self, core: usize, lvl: Level, set: usize) -> SimResult<()> {
        while !self.cache(core, lvl).free_tag_available(set) {
            let w = self.cache(core, lvl).lru_transactional(set, None).expect("tags held by lines");
            let t = self.cache(core, lvl).uncommitted_tx(set, w).expect("transactional way");
            self.demote_tx(core, core, lvl, set, w, t)?;
        }
        Ok(())
    }

    fn evict_way(&mut self, payer: usize, owner: usize, lvl: Level, set: usize, way: usize) -> SimResult<()> {
        let c = self.cache(owner, lvl);
        if let Some(t) = c.uncommitted_tx(set, way) {
            return self.demote_tx(payer, owner, lvl, set, way, t);
        }
        if c.line(set, way).dirty {
            self.writeback_down(payer, owner, lvl, set, way)
        } else {
            self.cache_mut(owner, lvl).take(set, way);
            Ok(())
        }
    }

    /// Moves a dirty non-transactional line one level down (or home from the
    /// LLC), merging with an older copy there.
    fn writeback_down(&mut self, payer: usize, owner: usize, lvl: Level, set: usize, way: usize) -> SimResult<()> {
        let addr = self.cache(owner, lvl).addr_of(set, way);
        let Some(n) = lvl.next() else {
            let data = self.llc.line(set, way).data;
            self.mc.writeback_home(addr, &data, &mut self.clocks[payer], &mut self.crash)?;
            self.llc.take(set, way);
            return Ok(());
        };
        let target = match self.cache(owner, n).find(addr) {
            Some((ns, nw)) if self.cache(owner, n).uncommitted_tx(ns, nw).is_none() => (ns, nw, true),
            Some(_) => {
                return Err(SimError::SimFault(format!("dirty line {addr} found above a transactional copy")));
            }
            None => {
                let ns = self.cache(owner, n).set_of(addr);
                (ns, self.make_room_as(payer, owner, n, ns, false)?, false)
            }
        };
        let e = self.cache_mut(owner, lvl).take(set, way);
        let nc = self.cache_mut(owner, n);
        let (ns, nw, present) = target;
        if present {
            let l = nc.line_mut(ns, nw);
            l.data = e.data;
            l.dirty = true;
            nc.touch(ns, nw);
        } else {
            nc.place(ns, nw, addr, e.data, true, None);
        }
        Ok(())
    }

    /// One forced log-GC pass, charged to core 0.
    pub fn force_gc(&mut self) -> SimResult<GcReport> {
        self.mc.gc(&mut self.clocks[0], &mut self.crash, true)
    }

    /// Moves an uncommitted line one level down; from the LLC it is flushed
    /// prematurely into the log zone.
    fn demote_tx(&mut self, payer: usize, owner: usize, lvl: Level, set: usize, way: usize, t: u32) -> SimResult<()> {
        let addr = self.cache(owner, lvl).addr_of(set, way);
        let Some(n) = lvl.next() else {
            let data = self.llc.line(set, way).data;
            self.mc.premature_flush(addr, &data, t, &mut self.clocks[payer], &mut self.crash)?;
            self.llc.take(set, way);
            self.mc.maybe_gc(&mut self.clocks[payer], &mut self.crash)?;
            return Ok(());
        };
        if let Some((ns, nw)) = self.cache(owner, n).find(addr) {
            if self.cache(owner, n).uncommitted_tx(ns, nw).is_some() {
                return Err(SimError::SimFault(format!("line {addr} transactional at two levels")));
            }
            if self.cache(owner, n).line(ns, nw).dirty {
                self.writeback_down(payer, owner, n, ns, nw)?;
            } else {
                self.cache_mut(owner, n).take(ns, nw);
            }
        }
        let ns = self.cache(owner, n).set_of(addr);
        let nw = self.make_room_as(payer, owner, n, ns, true)?;
        let e = self.cache_mut(owner, lvl).take(set, way);
        self.cache_mut(owner, n).place(ns, nw, addr, e.data, true, Some(t));
        Ok(())
    }

    // ---- side-effect-free views -------------------------------------------

    /// Newest committed (non-transactional) copy of `line`, wherever it is.
    pub fn peek_line(&self, line: Address) -> LineBytes {
        let line = line.line();
        for c in 0..self.cores.len() {
            for lvl in [Level::L1, Level::L2] {
                let cache = self.cache(c, lvl);
                if let Some((s, w)) = cache.find(line) {
                    if cache.uncommitted_tx(s, w).is_none() {
                        return cache.line(s, w).data;
                    }
                }
            }
        }
        if let Some((s, w)) = self.llc.find(line) {
            if self.llc.uncommitted_tx(s, w).is_none() {
                return self.llc.line(s, w).data;
            }
        }
        if let Some(h) = self.mc.peek(line) {
            if h.tx_state == TxState::Committed {
                return h.data;
            }
        }
        self.mc.pmem.peek_home(line)
    }

    pub fn peek_u64(&self, addr: u64) -> u64 {
        let a = Address(addr);
        let d = self.peek_line(a.line());
        let o = a.offset();
        u64::from_le_bytes(d[o..o + 8].try_into().expect("8 bytes"))
    }

    /// The pre-transaction copy served to readers of a foreign uncommitted
    /// line; bypasses cache fills.
    fn read_original(&mut self, core: usize, line: Address) -> LineBytes {
        self.counters.original_copy_reads += 1;
        for lvl in Level::ALL {
            self.charge(core, lvl);
        }
        self.peek_line(line)
    }

    /// Where the uncommitted copies of `tx_id` currently live.
    pub fn resident_lines_of(&self, tx_id: u32) -> Vec<(usize, Level, Address)> {
        let mut out = Vec::new();
        for c in 0..self.cores.len() {
            for lvl in [Level::L1, Level::L2] {
                let cache = self.cache(c, lvl);
                for (s, w) in cache.valid_ways() {
                    if cache.uncommitted_tx(s, w) == Some(tx_id) {
                        out.push((c, lvl, cache.addr_of(s, w)));
                    }
                }
            }
        }
        for (s, w) in self.llc.valid_ways() {
            if self.llc.uncommitted_tx(s, w) == Some(tx_id) {
                out.push((0, Level::Llc, self.llc.addr_of(s, w)));
            }
        }
        out
    }

    /// Structural checks used by tests: per-level tag rules, transactional
    /// exclusivity and memory-controller mapping soundness.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut tx_lines: FxHashMap<u64, (usize, Level)> = FxHashMap::default();
        let mut visit = |c: usize, lvl: Level, cache: &Cache| -> Result<(), String> {
            cache.check_invariants().map_err(|e| format!("core {c} {lvl:?}: {e}"))?;
            for (s, w) in cache.valid_ways() {
                if cache.uncommitted_tx(s, w).is_some() {
                    let a = cache.addr_of(s, w).0;
                    if let Some(prev) = tx_lines.insert(a, (c, lvl)) {
                        return Err(format!("line {a:#x} uncommitted at {prev:?} and {:?}", (c, lvl)));
                    }
                }
            }
            Ok(())
        };
        for (i, core) in self.cores.iter().enumerate() {
            visit(i, Level::L1, &core.l1)?;
            visit(i, Level::L2, &core.l2)?;
        }
        visit(0, Level::Llc, &self.llc)?;
        // Non-transactional copies never sit above a transactional one.
        for (&a, &(c, lvl)) in &tx_lines {
            let above: &[Level] = match lvl {
                Level::L1 => &[],
                Level::L2 => &[Level::L1],
                Level::Llc => &[Level::L1, Level::L2],
            };
            for &u in above {
                for core in 0..self.cores.len() {
                    if (u == Level::L1 || u == Level::L2) && lvl != Level::Llc && core != c {
                        continue;
                    }
                    if self.cache(core, u).find(Address(a)).is_some() {
                        return Err(format!("line {a:#x}: copy at core {core} {u:?} above transactional copy at {lvl:?}"));
                    }
                }
            }
            if self.mc.peek(Address(a)).is_some() {
                return Err(format!("line {a:#x}: cached transactional copy and an eWPQ mapping"));
            }
        }
        self.mc.check_invariants()
    }
}

fn check_span(addr: Address, len: usize) -> SimResult<()> {
    if len == 0 {
        return Err(SimError::Invalid("zero-length access".into()));
    }
    if addr.offset() + len > LINE_BYTES as usize {
        return Err(SimError::Invalid(format!("access at {addr} of {len} bytes crosses a line")));
    }
    if !addr.is_home() {
        return Err(SimError::Invalid(format!("address {addr} lies in the log zone")));
    }
    Ok(())
}
