//! Running a workload end to end and sweeping one configuration axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{generate, new_structure, Design, Executor, Mem, Op, Peek, Structure, WorkloadKind, WorkloadSpec};
use crate::config::SimConfig;
use crate::error::{SimError, SimResult};
use crate::pmem::PmemDevice;
use crate::stats::{CacheStats, EventCounters, LatencySummary, PmemBytes, SimStats, TxCounts, TxLenStats};

/// Lines written by `huge_tx`: line `l` lives at `base + 64 * l`.
#[derive(Clone, Debug)]
pub struct Touch {
    base: u64,
    lines: u64,
}

impl Touch {
    pub fn new(base: u64) -> Self {
        Touch { base, lines: 0 }
    }
}

impl Structure for Touch {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::TouchLines { first, lines, value } => {
                self.lines = self.lines.max(first + lines);
                for l in first..first + lines {
                    m.store(self.base + l * 64, value)?;
                }
                Ok(())
            }
            other => Err(SimError::Invalid(format!("huge_tx cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        Ok((0..self.lines).map(|l| (l, peek(self.base + l * 64))).collect())
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}

/// A single transaction updating `lines` distinct cache lines.
pub fn synthetic_huge_tx(lines: u64) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(WorkloadKind::HugeTx, 1, 0);
    s.huge_tx_lines = lines.max(1);
    s
}

#[derive(Clone, Copy, Debug, Default)]
struct Snapshot {
    instructions: u64,
    loads: u64,
    stores: u64,
    cache: [CacheStats; 3],
    tx: TxCounts,
    forced: u64,
    state_reset: u64,
    premature: u64,
    migrations: u64,
    gc_runs: u64,
    spills: u64,
    collisions: u64,
    stalls: u64,
}

impl Snapshot {
    fn take(ex: &Executor) -> Self {
        let m = &ex.machine;
        let c = &m.counters;
        let mc = &m.mc.counters;
        Snapshot {
            instructions: c.instructions,
            loads: c.loads,
            stores: c.stores,
            cache: m.level_counters().map(|l| CacheStats { accesses: l.accesses, hits: l.hits, misses: l.misses }),
            tx: TxCounts { started: c.tx_started, committed: c.tx_committed, aborted: c.tx_aborted },
            forced: c.forced_transactional_evictions,
            state_reset: c.state_reset_cycles,
            premature: mc.premature_flushes,
            migrations: mc.migrations,
            gc_runs: mc.gc_runs,
            spills: mc.spills,
            collisions: mc.truncation_collisions,
            stalls: mc.wpq_stall_cycles,
        }
    }
}

/// Runs setup and the measured operations of `spec` under `design`, checks
/// the structure against the reference model and powers off cleanly.
pub fn run_workload(spec: &WorkloadSpec, design: Design, cfg: &SimConfig) -> SimResult<SimStats> {
    Ok(run_workload_image(spec, design, cfg)?.0)
}

/// [`run_workload`], also returning the pmem image left by the clean power-off.
pub fn run_workload_image(spec: &WorkloadSpec, design: Design, cfg: &SimConfig) -> SimResult<(SimStats, PmemDevice)> {
    let stream = generate(spec)?;
    let mut ex = Executor::new(design, cfg)?;
    let mut s = new_structure(spec);
    let threads = spec.threads.min(cfg.core_count as usize).max(1);

    ex.populate(s.as_mut(), &stream.setup)?;
    let before = Snapshot::take(&ex);
    let start = ex.machine.elapsed_cycles();
    ex.record_writes = true;

    let mut lat = Vec::with_capacity(stream.ops.len());
    let mut lens = Vec::with_capacity(stream.ops.len());
    let mut logical = 0;
    for (i, op) in stream.ops.iter().enumerate() {
        let out = ex.run_op(i % threads, s.as_mut(), op)?;
        lat.push(out.cycles);
        lens.push(out.len);
        logical += ex.writes.len() as u64;
    }
    let cycles = ex.machine.elapsed_cycles() - start;
    let after = Snapshot::take(&ex);

    let got = s.contents(&|a| ex.machine.peek_u64(a)).map_err(SimError::SimFault)?;
    if got != stream.expected {
        return Err(SimError::SimFault(format!(
            "{} under {design}: final contents differ from the reference model ({} vs {} entries)",
            spec.kind,
            got.len(),
            stream.expected.len()
        )));
    }

    let pmem_bytes = PmemBytes::from_counters(ex.machine.pmem().counters());
    let (pmem, off) = ex.machine.power_off(true);
    let d = |a: u64, b: u64| a - b;
    let mut st = SimStats {
        workload: spec.kind.to_string(),
        design: design.to_string(),
        seed: spec.seed,
        ops: spec.ops,
        threads: threads as u64,
        clock_ghz: cfg.clock_ghz,
        cycles,
        instructions: d(after.instructions, before.instructions),
        loads: d(after.loads, before.loads),
        stores: d(after.stores, before.stores),
        logical_writes: logical,
        pmem_bytes,
        shutdown_bytes: off.bytes_written,
        cache: std::array::from_fn(|i| CacheStats {
            accesses: d(after.cache[i].accesses, before.cache[i].accesses),
            hits: d(after.cache[i].hits, before.cache[i].hits),
            misses: d(after.cache[i].misses, before.cache[i].misses),
        }),
        tx: TxCounts {
            started: d(after.tx.started, before.tx.started),
            committed: d(after.tx.committed, before.tx.committed),
            aborted: d(after.tx.aborted, before.tx.aborted),
        },
        latency: LatencySummary::from_samples(&lat),
        txlen: if design == Design::Opt { TxLenStats::default() } else { TxLenStats::from_lens(&lens) },
        counters: EventCounters {
            premature_flushes: d(after.premature, before.premature),
            migrations: d(after.migrations, before.migrations),
            gc_runs: d(after.gc_runs, before.gc_runs),
            spills: d(after.spills, before.spills),
            forced_transactional_evictions: d(after.forced, before.forced),
            truncation_collisions: d(after.collisions, before.collisions),
            wpq_stall_cycles: d(after.stalls, before.stalls),
            state_reset_cycles: d(after.state_reset, before.state_reset),
        },
        ..SimStats::default()
    };
    st.finish();
    Ok((st, pmem))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// TransTag ratio of the LLC.
    TranstagRatio,
    /// eWPQ entries; 0 stands for an unbounded eWPQ.
    EwpqEntries,
    StateResetCycles,
    WpqEntries,
    PmemWriteNs,
    /// Lines per transaction of the synthetic huge-transaction workload.
    TxSize,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::TranstagRatio,
        SweepAxis::EwpqEntries,
        SweepAxis::StateResetCycles,
        SweepAxis::WpqEntries,
        SweepAxis::PmemWriteNs,
        SweepAxis::TxSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TranstagRatio => "transtag_ratio",
            SweepAxis::EwpqEntries => "ewpq_entries",
            SweepAxis::StateResetCycles => "state_reset_cycles",
            SweepAxis::WpqEntries => "wpq_entries",
            SweepAxis::PmemWriteNs => "pmem_write_ns",
            SweepAxis::TxSize => "tx_size",
        }
    }

    /// Applies one sweep point to a copy of the base config and spec.
    pub fn apply(self, value: f64, cfg: &mut SimConfig, spec: &mut WorkloadSpec) -> SimResult<()> {
        let whole = || -> SimResult<u64> {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(SimError::Invalid(format!("{} needs a whole number, got {value}", self.name())));
            }
            Ok(value as u64)
        };
        match self {
            SweepAxis::TranstagRatio => cfg.cache_levels[2].transtag_ratio = value,
            SweepAxis::EwpqEntries => match whole()? {
                0 => cfg.ewpq_unbounded = true,
                n => {
                    cfg.ewpq_unbounded = false;
                    cfg.ewpq_entries = n;
                }
            },
            SweepAxis::StateResetCycles => cfg.state_reset_cycles = whole()?,
            SweepAxis::WpqEntries => cfg.wpq_entries = whole()?,
            SweepAxis::PmemWriteNs => cfg.pmem_write_ns = whole()?,
            SweepAxis::TxSize => {
                let lines = whole()?;
                if spec.kind != WorkloadKind::HugeTx {
                    *spec = WorkloadSpec { kind: WorkloadKind::HugeTx, initial: 0, ..spec.clone() };
                }
                spec.huge_tx_lines = lines;
            }
        }
        cfg.validate()?;
        spec.validate()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SimError::Invalid(format!("unknown sweep axis `{s}`")))
    }
}

/// One run per point, all with the same seed.
pub fn run_sweep(
    spec: &WorkloadSpec,
    design: Design,
    base: &SimConfig,
    axis: SweepAxis,
    points: &[f64],
) -> SimResult<Vec<SimStats>> {
    if points.is_empty() {
        return Err(SimError::Invalid("sweep needs at least one point".into()));
    }
    points
        .iter()
        .map(|&v| {
            let (mut cfg, mut sp) = (base.clone(), spec.clone());
            axis.apply(v, &mut cfg, &mut sp)?;
            let mut st = run_workload(&sp, design, &cfg)?;
            st.sweep_axis = axis.to_string();
            st.sweep_value = v;
            Ok(st)
        })
        .collect()
}
