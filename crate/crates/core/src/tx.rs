//! Transaction primitives: `tx_start`, `tx_commit`, `tx_abort` and thread
//! context switching of the per-core registers.

use serde::{Deserialize, Serialize};

use crate::addr::{Address, LINE_BYTES};
use crate::cache::TX_ID_LIMIT;
use crate::config::StateResetMode;
use crate::error::{SimError, SimResult};
use crate::event::EventKind;
use crate::machine::{Level, Machine, TxStatus, TxTrack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxPhase {
    Active,
    Committed,
    Aborted,
}

/// Snapshot of a thread's transaction as seen by the programmer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxContext {
    pub tx_id: u32,
    pub len: u32,
    pub state: TxPhase,
    pub core: usize,
}

/// What `tx_commit` did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommitReport {
    pub tx_id: u32,
    pub len: u32,
    pub tags_toggled: u64,
    pub offchip_toggled: u64,
}

/// Saved per-core registers of a descheduled thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavedContext {
    pub tx_id: Option<u32>,
    pub tx_len: u32,
}

impl Machine {
    pub fn tx_start(&mut self, core: usize) -> SimResult<TxContext> {
        if self.cores[core].regs.tx_id.is_some() {
            return Err(SimError::NestedTransaction(core));
        }
        if self.global_tx_id >= TX_ID_LIMIT {
            return Err(SimError::TxIdExhausted(self.global_tx_id));
        }
        self.crash.point(EventKind::GlobalTxId)?;
        let id = self.global_tx_id as u32;
        self.global_tx_id += 1;
        if self.hercules {
            self.crash.point(EventKind::ProfileWrite)?;
            self.mc.pmem.init_profile(id);
            let line = self.mc.pmem.layout().profile_addr(id) / LINE_BYTES;
            self.mc.core_write(line, &mut self.clocks[core]);
        }
        self.crash.point(EventKind::CoreRegisters)?;
        self.cores[core].regs.tx_id = Some(id);
        self.cores[core].regs.tx_len = 0;
        self.txs.insert(
            id,
            TxTrack { status: TxStatus::Active, cores: 1 << core, lines: Vec::new(), seen: Default::default() },
        );
        self.live_txs += 1;
        self.counters.tx_started += 1;
        Ok(TxContext { tx_id: id, len: 0, state: TxPhase::Active, core })
    }

    /// Current context of `core`, if a transaction is loaded there.
    pub fn tx_context(&self, core: usize) -> Option<TxContext> {
        let regs = self.cores[core].regs;
        let id = regs.tx_id?;
        let state = match self.txs.get(&id).map(|t| t.status) {
            Some(TxStatus::Active) => TxPhase::Active,
            _ => TxPhase::Aborted,
        };
        Some(TxContext { tx_id: id, len: regs.tx_len, state, core })
    }

    pub fn tx_write(&mut self, core: usize, addr: Address, bytes: &[u8]) -> SimResult<()> {
        self.require_tx(core)?;
        self.store(core, addr, bytes)
    }

    pub fn tx_read(&mut self, core: usize, addr: Address, buf: &mut [u8]) -> SimResult<()> {
        self.require_tx(core)?;
        self.load(core, addr, buf)
    }

    fn require_tx(&self, core: usize) -> SimResult<u32> {
        self.current_tx(core)?.ok_or(SimError::NoActiveTx(core))
    }

    fn tx_locations(&self, t: u32, cores: u64, line: Address) -> Vec<(usize, Level, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.cores.len() {
            if cores & (1 << c) == 0 {
                continue;
            }
            for lvl in [Level::L1, Level::L2] {
                let cache = self.cache(c, lvl);
                if let Some((s, w)) = cache.find(line) {
                    if cache.uncommitted_tx(s, w) == Some(t) {
                        out.push((c, lvl, s, w));
                    }
                }
            }
        }
        if let Some((s, w)) = self.llc.find(line) {
            if self.llc.uncommitted_tx(s, w) == Some(t) {
                out.push((0, Level::Llc, s, w));
            }
        }
        out
    }

    /// Commits: (1) TxLen write, the durability point; (2) on-chip TransTag
    /// resets; (3) off-chip eWPQ toggles.
    pub fn tx_commit(&mut self, core: usize) -> SimResult<CommitReport> {
        let Some(t) = self.cores[core].regs.tx_id else {
            return Err(SimError::NoActiveTx(core));
        };
        if self.txs.get(&t).map(|x| x.status) != Some(TxStatus::Active) {
            self.cores[core].regs = Default::default();
            self.txs.remove(&t);
            return Err(SimError::TxAborted(t));
        }
        let len = self.txs[&t].lines.len() as u32;
        if self.hercules && len > 0 {
            self.crash.point(EventKind::ProfileWrite)?;
            self.mc.pmem.set_txlen(t, len)?;
            self.crash.note_commit(t);
            let line = self.mc.pmem.layout().profile_addr(t) / LINE_BYTES;
            self.mc.core_write(line, &mut self.clocks[core]);
        }
        let mut toggled = 0;
        let mut offchip = 0;
        if self.hercules {
            let (lines, cores) = {
                let tr = &self.txs[&t];
                (tr.lines.clone(), tr.cores)
            };
            for &l in &lines {
                for (c, lvl, s, w) in self.tx_locations(t, cores, Address(l)) {
                    self.crash.point(EventKind::TagToggle)?;
                    let cache = match lvl {
                        Level::L1 => &mut self.cores[c].l1,
                        Level::L2 => &mut self.cores[c].l2,
                        Level::Llc => &mut self.llc,
                    };
                    if cache.commit_way(s, w, t) {
                        toggled += 1;
                    }
                }
            }
            offchip = self.mc.commit_offchip(t, &mut self.clocks[core], &mut self.crash)?;
            let reset = match self.cfg.state_reset_mode {
                StateResetMode::Uniform => self.cfg.state_reset_cycles,
                StateResetMode::PerLine => self.cfg.state_reset_cycles * toggled,
            };
            self.clocks[core].advance(reset);
            self.counters.state_reset_cycles += reset;
        }
        self.counters.tags_toggled += toggled;
        self.counters.tx_committed += 1;
        self.cores[core].regs = Default::default();
        self.txs.remove(&t);
        self.live_txs -= 1;
        Ok(CommitReport { tx_id: t, len, tags_toggled: toggled, offchip_toggled: offchip })
    }

    /// Aborts the transaction loaded on `core`.
    pub fn tx_abort(&mut self, core: usize) -> SimResult<()> {
        let Some(t) = self.cores[core].regs.tx_id else {
            return Err(SimError::NoActiveTx(core));
        };
        if self.txs.get(&t).map(|x| x.status) == Some(TxStatus::Active) {
            self.abort_tx(t)?;
            self.clocks[core].advance(self.cfg.state_reset_cycles);
        }
        self.cores[core].regs = Default::default();
        self.txs.remove(&t);
        Ok(())
    }

    /// Discards every uncommitted line of `t`, on-chip and off-chip. The
    /// owning thread learns about it on its next access.
    pub(crate) fn abort_tx(&mut self, t: u32) -> SimResult<()> {
        let (lines, cores) = match self.txs.get(&t) {
            Some(tr) if tr.status == TxStatus::Active => (tr.lines.clone(), tr.cores),
            _ => return Ok(()),
        };
        if self.hercules {
            for &l in &lines {
                for (c, lvl, s, w) in self.tx_locations(t, cores, Address(l)) {
                    self.crash.point(EventKind::TagInvalidate)?;
                    let cache = match lvl {
                        Level::L1 => &mut self.cores[c].l1,
                        Level::L2 => &mut self.cores[c].l2,
                        Level::Llc => &mut self.llc,
                    };
                    cache.take(s, w);
                }
            }
            self.mc.abort_offchip(t, &mut self.crash)?;
        }
        if let Some(tr) = self.txs.get_mut(&t) {
            tr.status = TxStatus::Aborted;
        }
        self.live_txs -= 1;
        self.counters.tx_aborted += 1;
        Ok(())
    }

    /// Saves and clears the registers of `core` (thread descheduled).
    pub fn context_save(&mut self, core: usize) -> SimResult<SavedContext> {
        let regs = self.cores[core].regs;
        self.crash.point(EventKind::CoreRegisters)?;
        self.cores[core].regs = Default::default();
        Ok(SavedContext { tx_id: regs.tx_id, tx_len: regs.tx_len })
    }

    /// Loads a saved thread context onto `core`.
    pub fn context_restore(&mut self, core: usize, saved: SavedContext) -> SimResult<()> {
        if self.cores[core].regs.tx_id.is_some() {
            return Err(SimError::NestedTransaction(core));
        }
        self.crash.point(EventKind::CoreRegisters)?;
        self.cores[core].regs.tx_id = saved.tx_id;
        self.cores[core].regs.tx_len = saved.tx_len;
        if let Some(tr) = saved.tx_id.and_then(|t| self.txs.get_mut(&t)) {
            tr.cores |= 1 << core;
        }
        Ok(())
    }
}
