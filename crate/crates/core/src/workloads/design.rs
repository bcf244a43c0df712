//! The three designs compared by the benchmarks. All of them drive the same
//! machine model; they differ only in what each operation does around the
//! data structure's loads and stores.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::mem::ImageMem;
use super::{Mem, Op, Structure};
use crate::config::SimConfig;
use crate::error::{SimError, SimResult};
use crate::machine::Machine;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Design {
    /// Hardware transactions: TransTags, eWPQ and the log zone.
    Hercules,
    /// Plain volatile execution, no durability actions.
    Opt,
    /// Software redo logging on an eADR machine: log records and data go
    /// through the caches, ordered by fences, without cache-line flushes.
    SwlEadr,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Hercules, Design::Opt, Design::SwlEadr];

    pub fn name(self) -> &'static str {
        match self {
            Design::Hercules => "HERCULES",
            Design::Opt => "OPT",
            Design::SwlEadr => "SWL_EADR",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let u = s.to_ascii_uppercase().replace('-', "_");
        Design::ALL
            .into_iter()
            .find(|d| d.name() == u)
            .ok_or_else(|| SimError::Invalid(format!("unknown design `{s}`")))
    }
}

/// Start of the software redo-log ring.
pub const SWL_LOG_BASE: u64 = 0x8000_0000;
/// Ring size; larger than any modelled LLC so old records get written back.
pub const SWL_LOG_BYTES: u64 = 64 << 20;
/// Cost of a store fence once the store buffer is drained into the
/// (persistent) L1.
pub const SWL_FENCE_CYCLES: u64 = 10;
/// Record header word: `tx_seq << 8 | record count` for a commit marker.
const SWL_RECORD: u64 = 16;

#[derive(Clone, Debug, Default)]
struct SwlState {
    /// Next record offset within the ring.
    tail: u64,
    seq: u64,
    /// Redo entries of the running transaction, in first-write order.
    writes: Vec<(u64, u64)>,
    index: FxHashMap<u64, usize>,
}

impl SwlState {
    fn slot(&mut self) -> u64 {
        let a = SWL_LOG_BASE + self.tail;
        self.tail = (self.tail + SWL_RECORD) % SWL_LOG_BYTES;
        a
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpOutcome {
    /// Transaction id (HERCULES only).
    pub tx_id: Option<u32>,
    /// Lines written by the transaction (HERCULES), or redo records (SWL).
    pub len: u64,
    pub cycles: u64,
}

/// Runs operations of one structure under one design, serializing threads
/// with a lock whose hand-off time is tracked in simulated cycles.
#[derive(Clone, Debug)]
pub struct Executor {
    pub design: Design,
    pub machine: Machine,
    swl: SwlState,
    lock_free_at: u64,
    /// When set, every store of the current operation is recorded.
    pub record_writes: bool,
    pub writes: Vec<(u64, u64)>,
}

struct DesignMem<'a> {
    ex: &'a mut Executor,
    core: usize,
}

impl Mem for DesignMem<'_> {
    fn load(&mut self, addr: u64) -> SimResult<u64> {
        let ex = &mut *self.ex;
        if ex.design == Design::SwlEadr {
            // Read-your-writes through the redo buffer.
            ex.machine.compute(self.core, 1)?;
            if let Some(&i) = ex.swl.index.get(&addr) {
                return Ok(ex.swl.writes[i].1);
            }
        }
        ex.machine.load_u64(self.core, addr)
    }

    fn store(&mut self, addr: u64, v: u64) -> SimResult<()> {
        let ex = &mut *self.ex;
        if ex.record_writes {
            ex.writes.push((addr, v));
        }
        if ex.design != Design::SwlEadr {
            return ex.machine.store_u64(self.core, addr, v);
        }
        let rec = ex.swl.slot();
        ex.machine.store_u64(self.core, rec, addr)?;
        ex.machine.store_u64(self.core, rec + 8, v)?;
        match ex.swl.index.get(&addr) {
            Some(&i) => ex.swl.writes[i].1 = v,
            None => {
                ex.swl.index.insert(addr, ex.swl.writes.len());
                ex.swl.writes.push((addr, v));
            }
        }
        Ok(())
    }

    fn compute(&mut self, n: u64) -> SimResult<()> {
        self.ex.machine.compute(self.core, n)
    }
}

impl Executor {
    pub fn new(design: Design, cfg: &SimConfig) -> SimResult<Self> {
        let machine = Machine::new(cfg, design == Design::Hercules)?;
        Ok(Self::with_machine(design, machine))
    }

    pub fn with_machine(design: Design, machine: Machine) -> Self {
        Executor { design, machine, swl: SwlState::default(), lock_free_at: 0, record_writes: false, writes: Vec::new() }
    }

    /// Applies `ops` straight to the pmem image (no caches, no timing, no
    /// transactions) and clears the write counters.
    pub fn populate(&mut self, s: &mut dyn Structure, ops: &[Op]) -> SimResult<()> {
        let mut m = ImageMem { pmem: self.machine.pmem_mut() };
        for op in ops {
            s.apply(&mut m, op)?;
        }
        self.machine.pmem_mut().reset_counters();
        Ok(())
    }

    /// Executes `op` on `core` as one failure-atomic operation.
    pub fn run_op(&mut self, core: usize, s: &mut dyn Structure, op: &Op) -> SimResult<OpOutcome> {
        self.machine.wait_until(core, self.lock_free_at);
        let start = self.machine.clock(core);
        self.writes.clear();
        let mut out = OpOutcome::default();
        match self.design {
            Design::Opt => s.apply(&mut DesignMem { ex: self, core }, op)?,
            Design::Hercules => {
                let ctx = self.machine.tx_start(core)?;
                out.tx_id = Some(ctx.tx_id);
                if let Err(e) = s.apply(&mut DesignMem { ex: self, core }, op) {
                    if !matches!(e, SimError::Crashed(_)) {
                        let _ = self.machine.tx_abort(core);
                    }
                    return Err(e);
                }
                out.len = self.machine.tx_commit(core)?.len as u64;
            }
            Design::SwlEadr => {
                s.apply(&mut DesignMem { ex: self, core }, op)?;
                out.len = self.swl.writes.len() as u64;
                self.swl_commit(core)?;
            }
        }
        let end = self.machine.clock(core);
        self.lock_free_at = end;
        out.cycles = end - start;
        Ok(out)
    }

    /// Log records are already in place: mark the commit, apply the data,
    /// then retire the log.
    fn swl_commit(&mut self, core: usize) -> SimResult<()> {
        let m = &mut self.machine;
        let n = self.swl.writes.len() as u64;
        if n == 0 {
            return Ok(());
        }
        self.swl.seq += 1;
        m.compute(core, SWL_FENCE_CYCLES)?;
        let marker = self.swl.slot();
        m.store_u64(core, marker, self.swl.seq << 8 | n.min(255))?;
        m.compute(core, SWL_FENCE_CYCLES)?;
        for &(addr, v) in &self.swl.writes {
            m.store_u64(core, addr, v)?;
        }
        m.compute(core, SWL_FENCE_CYCLES)?;
        m.store_u64(core, marker + 8, self.swl.seq)?;
        self.swl.writes.clear();
        self.swl.index.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_names_parse() {
        for d in Design::ALL {
            assert_eq!(d.name().parse::<Design>().unwrap(), d);
        }
        assert_eq!("swl-eadr".parse::<Design>().unwrap(), Design::SwlEadr);
        assert!("kiln".parse::<Design>().is_err());
    }
}
