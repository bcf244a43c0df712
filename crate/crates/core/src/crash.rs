//! Power-off (clean or crash), boot and recovery.
//!
//! On power loss eADR keeps the caches alive long enough to drain: the
//! memory controller saves its registers and eWPQ, then every cache level is
//! flushed from the LLC upwards. Uncommitted lines go to the emergency area,
//! everything else to its home address.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::addr::{Address, LineBytes};
use crate::cache::{Cache, TxState};
use crate::config::SimConfig;
use crate::error::{SimError, SimResult};
use crate::event::{CrashCtl, EventKind};
use crate::machine::Machine;
use crate::mc::{truncate_home, truncate_tx, EwpqEntry};
use crate::pmem::{EmergencyRecord, PmemDevice};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerOffReport {
    pub lines_flushed: u64,
    pub emergency_records: u64,
    pub bytes_written: u64,
    pub clean: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Committed transactions whose data was completed at home.
    pub committed_completed: u64,
    /// Log entries and emergency records of uncommitted transactions.
    pub discarded: u64,
    pub lines_migrated: u64,
    pub log_tail_after: u64,
}

impl Machine {
    /// Powers the machine off and returns the persistent device. With
    /// `clean`, committed log entries are migrated first and the shutdown
    /// flag is set when nothing uncommitted remains.
    pub fn power_off(mut self, clean: bool) -> (PmemDevice, PowerOffReport) {
        self.crash.schedule(None);
        let before = self.mc.pmem.counters().total_written();
        if clean && self.hercules {
            // No crash is scheduled, so this cannot fail on a crash point.
            let _ = self.mc.migration_scan(&mut self.clocks[0], &mut self.crash);
        }
        self.mc.save_state();
        let mut rep = PowerOffReport { clean, ..Default::default() };
        let mut flush = |cache: &mut Cache, pmem: &mut PmemDevice| {
            let ways: Vec<(usize, usize)> = cache.valid_ways().collect();
            for (s, w) in ways {
                let addr = cache.addr_of(s, w);
                let tx = cache.uncommitted_tx(s, w);
                let e = cache.take(s, w);
                match tx {
                    Some(t) => {
                        pmem.append_emergency(EmergencyRecord {
                            data: e.data,
                            home: addr,
                            tx_id: t,
                            tx_state: TxState::Uncommitted,
                        });
                        rep.emergency_records += 1;
                    }
                    None if e.dirty => {
                        pmem.write_home(addr, &e.data);
                        rep.lines_flushed += 1;
                    }
                    None => {}
                }
            }
        };
        let pmem = &mut self.mc.pmem;
        flush(&mut self.llc, pmem);
        for c in &mut self.cores {
            flush(&mut c.l2, pmem);
        }
        for c in &mut self.cores {
            flush(&mut c.l1, pmem);
        }
        let nothing_pending = pmem.emergency().is_empty() && pmem.mc_save().entries.is_empty()
            && pmem.extension().iter().all(Option::is_none);
        let mut pmem = self.mc.pmem;
        if clean && nothing_pending {
            pmem.write_shutdown_flag(1);
        }
        rep.bytes_written = pmem.counters().total_written() - before;
        (pmem, rep)
    }
}

/// One mapping found in the saved eWPQ or the extension.
struct Found {
    ewpq_slot: Option<u32>,
    ext_slot: Option<u32>,
    home: Address,
    data: LineBytes,
    tx_id: u32,
    state: TxState,
}

fn gather(pmem: &PmemDevice) -> SimResult<Vec<Found>> {
    let mut raw: Vec<(Option<u32>, Option<u32>, u64)> =
        pmem.mc_save().entries.iter().map(|(s, e)| (Some(*s), None, *e)).collect();
    raw.extend(pmem.extension().iter().enumerate().filter_map(|(i, e)| e.map(|e| (None, Some(i as u32), e))));
    let mut out = Vec::with_capacity(raw.len());
    for (ewpq_slot, ext_slot, enc) in raw {
        let e = EwpqEntry::decode(enc);
        let log = pmem
            .log_entry(e.log_lo)
            .ok_or_else(|| SimError::CorruptDump(format!("mapping {enc:#018x} points at empty log slot {}", e.log_lo)))?;
        if truncate_home(log.home) != e.home_lo || truncate_tx(log.tx_id) != e.tx_id_lo {
            return Err(SimError::CorruptDump(format!("mapping {enc:#018x} disagrees with its log entry")));
        }
        out.push(Found {
            ewpq_slot,
            ext_slot,
            home: log.home,
            data: log.data,
            tx_id: log.tx_id,
            state: if e.tx_state == TxState::Committed { TxState::Committed } else { log.tx_state },
        });
    }
    Ok(out)
}

/// Completes committed transactions and discards uncommitted ones. Safe to
/// rerun after a crash at any of its own points.
pub fn recover(pmem: &mut PmemDevice, crash: &mut CrashCtl) -> SimResult<RecoveryReport> {
    let found = gather(pmem)?;
    let committed: BTreeMap<u32, u32> = pmem.committed_profiles().into_iter().collect();
    let emergency = pmem.emergency().to_vec();
    let mut rep = RecoveryReport::default();

    let clear = |pmem: &mut PmemDevice, f: &Found, crash: &mut CrashCtl| -> SimResult<()> {
        crash.point(EventKind::ValidityClear)?;
        if let Some(s) = f.ewpq_slot {
            pmem.clear_saved_ewpq_entry(s);
        }
        if let Some(s) = f.ext_slot {
            pmem.write_extension(s, None);
        }
        Ok(())
    };

    // Entries already toggled to committed: their tx profile may be gone.
    for f in found.iter().filter(|f| f.state == TxState::Committed && !committed.contains_key(&f.tx_id)) {
        crash.point(EventKind::RecoveryMigrate)?;
        pmem.write_home(f.home, &f.data);
        rep.lines_migrated += 1;
        clear(pmem, f, crash)?;
    }
    for &t in committed.keys() {
        for r in emergency.iter().filter(|r| r.tx_id == t) {
            crash.point(EventKind::RecoveryMigrate)?;
            pmem.write_home(r.home, &r.data);
            rep.lines_migrated += 1;
        }
        for f in found.iter().filter(|f| f.tx_id == t) {
            crash.point(EventKind::RecoveryMigrate)?;
            pmem.write_home(f.home, &f.data);
            rep.lines_migrated += 1;
            clear(pmem, f, crash)?;
        }
        crash.point(EventKind::RecoveryReset)?;
        pmem.reset_txlen(t);
        rep.committed_completed += 1;
    }
    rep.discarded = found
        .iter()
        .filter(|f| f.state == TxState::Uncommitted && !committed.contains_key(&f.tx_id))
        .count() as u64
        + emergency.iter().filter(|r| !committed.contains_key(&r.tx_id)).count() as u64;

    crash.point(EventKind::RecoveryClear)?;
    pmem.clear_emergency();
    pmem.clear_saved_ewpq();
    let ext: Vec<u32> =
        pmem.extension().iter().enumerate().filter(|(_, e)| e.is_some()).map(|(i, _)| i as u32).collect();
    for s in ext {
        pmem.write_extension(s, None);
    }
    let head = pmem.mc_save().log_head;
    pmem.save_registers(head, head);
    rep.log_tail_after = head;
    Ok(rep)
}

/// Boots over `pmem`: runs recovery unless the last shutdown was clean,
/// then marks the device as in use.
pub fn boot(cfg: &SimConfig, mut pmem: PmemDevice, hercules: bool) -> SimResult<(Machine, Option<RecoveryReport>)> {
    cfg.validate()?;
    let rep = if pmem.shutdown_flag() == 1 {
        None
    } else {
        Some(recover(&mut pmem, &mut CrashCtl::new())?)
    };
    pmem.write_shutdown_flag(0);
    Ok((Machine::with_pmem(cfg, pmem, hercules), rep))
}
