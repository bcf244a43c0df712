//! Crash injection against a shadow-memory oracle.
//!
//! A run is replayed with a crash scheduled at a chosen event. After the
//! crash the machine is powered off, the dump goes through the binary
//! format, recovery boots a fresh machine, and every word the measured
//! operations ever wrote is compared with the oracle: all earlier
//! transactions fully applied, the interrupted one applied entirely if its
//! TxLen landed and not at all otherwise.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::crash::{boot, recover};
use crate::dump;
use crate::error::{SimError, SimResult};
use crate::event::{CrashCtl, EventKind};
use crate::machine::Machine;
use crate::pmem::PmemDevice;
use crate::rng::SimRng;
use crate::workloads::{generate, new_structure, Design, Executor, Structure, WorkloadKind, WorkloadSpec};

/// RNG stream used to pick crash points.
const CRASH_STREAM: u64 = 0xc4a5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub workload: String,
    pub seed: u64,
    /// Replay key: the same spec, config and seed crashed at this event.
    pub event_index: u64,
    pub event: Option<EventKind>,
    pub op_index: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub workload: String,
    pub seed: u64,
    pub ops: u64,
    /// Events in an uncrashed run; crash points are drawn from `0..events`.
    pub events: u64,
    pub trials: u64,
    /// Trials whose interrupted transaction had already landed its TxLen.
    pub landed: u64,
    pub violations: Vec<Violation>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The spec used for fuzzing: two threads over a small initial image, so
/// that the tiny stress caches overflow into the log zone.
pub fn fuzz_spec(kind: WorkloadKind, ops: u64, seed: u64) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(kind, ops, seed);
    s.threads = 2;
    s.initial = match kind {
        WorkloadKind::ArraySwap => 64,
        WorkloadKind::LinkedList => 16,
        WorkloadKind::HugeTx => 0,
        _ => 256,
    };
    s.key_space = 4096;
    if kind == WorkloadKind::HugeTx {
        s.huge_tx_lines = 64;
    }
    s
}

/// State handed to a trial callback right after the crash.
struct Crash<'a> {
    op_index: u64,
    event_index: u64,
    kind: EventKind,
    /// The interrupted transaction's TxLen reached pmem.
    landed: bool,
    pmem: PmemDevice,
    /// Machine and structure just before the interrupted operation.
    pre: &'a Machine,
    structure: &'a dyn Structure,
    /// Final value of every word written by earlier operations.
    shadow: &'a FxHashMap<u64, u64>,
    /// Words written by the interrupted operation, in program order.
    writes: &'a [(u64, u64)],
}

/// Runs `spec` under HERCULES and invokes `f` once per target event (which
/// must be ascending). Returns the total number of events in the run.
fn drive(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    targets: &[u64],
    mut f: impl FnMut(Crash<'_>) -> SimResult<()>,
) -> SimResult<u64> {
    let stream = generate(spec)?;
    let mut ex = Executor::new(Design::Hercules, cfg)?;
    let mut s = new_structure(spec);
    ex.populate(s.as_mut(), &stream.setup)?;
    ex.record_writes = true;
    let threads = spec.threads.min(cfg.core_count as usize).max(1);
    let mut shadow: FxHashMap<u64, u64> = FxHashMap::default();
    let mut next = 0;

    for (i, op) in stream.ops.iter().enumerate() {
        let core = i % threads;
        let pre = (next < targets.len()).then(|| (ex.clone(), s.clone()));
        let out = ex.run_op(core, s.as_mut(), op)?;
        let end = ex.machine.crash.events();
        if let Some((pre_ex, pre_s)) = &pre {
            while next < targets.len() && targets[next] < end {
                let idx = targets[next];
                next += 1;
                let (mut c_ex, mut c_s) = (pre_ex.clone(), pre_s.clone());
                let landed_before = c_ex.machine.crash.landed_commits().len();
                c_ex.machine.crash.schedule(Some(idx));
                let kind = match c_ex.run_op(core, c_s.as_mut(), op) {
                    Err(SimError::Crashed(c)) => c.kind,
                    Err(e) => return Err(e),
                    Ok(_) => {
                        return Err(SimError::SimFault(format!("replay of op {i} did not reach event {idx}")));
                    }
                };
                let landed =
                    c_ex.machine.crash.landed_commits()[landed_before..].iter().any(|&(_, t)| Some(t) == out.tx_id);
                let (pmem, _) = c_ex.machine.power_off(false);
                f(Crash {
                    op_index: i as u64,
                    event_index: idx,
                    kind,
                    landed,
                    pmem,
                    pre: &pre_ex.machine,
                    structure: pre_s.as_ref(),
                    shadow: &shadow,
                    writes: &ex.writes,
                })?;
            }
        }
        for &(a, v) in &ex.writes {
            shadow.insert(a, v);
        }
    }
    Ok(ex.machine.crash.events())
}

fn probe_events(spec: &WorkloadSpec, cfg: &SimConfig) -> SimResult<u64> {
    drive(spec, cfg, &[], |_| Ok(()))
}

/// Recovers a crashed dump and checks it against the oracle. Returns a
/// description of the first disagreement, if any.
fn check(c: Crash<'_>, cfg: &SimConfig) -> SimResult<Option<String>> {
    let bytes = dump::encode(&c.pmem);
    let pmem = dump::decode(&bytes)?;
    let m = match boot(cfg, pmem, true) {
        Ok((m, _)) => m,
        Err(e) => return Ok(Some(format!("recovery failed: {e}"))),
    };
    let mut op_words: FxHashMap<u64, u64> = FxHashMap::default();
    for &(a, v) in c.writes {
        op_words.insert(a, v);
    }
    let (mut applied, mut untouched, mut both) = (0u64, 0u64, 0u64);
    for (&a, &post) in &op_words {
        let pre = c.pre.peek_u64(a);
        let got = m.peek_u64(a);
        match (got == post, got == pre) {
            (true, true) => both += 1,
            (true, false) => applied += 1,
            (false, true) => untouched += 1,
            (false, false) => {
                return Ok(Some(format!("{a:#x} holds {got:#x}, neither old {pre:#x} nor new {post:#x}")));
            }
        }
    }
    if c.landed && untouched > 0 {
        return Ok(Some(format!("committed transaction lost {untouched} of {} words", op_words.len())));
    }
    if !c.landed && applied > 0 {
        return Ok(Some(format!(
            "uncommitted transaction leaked {applied} of {} words ({both} unchanged by it)",
            op_words.len()
        )));
    }
    for (&a, &v) in c.shadow {
        if op_words.contains_key(&a) {
            continue;
        }
        let got = m.peek_u64(a);
        if got != v {
            return Ok(Some(format!("earlier committed word {a:#x} holds {got:#x}, expected {v:#x}")));
        }
    }
    if let Err(e) = c.structure.contents(&|a| m.peek_u64(a)) {
        return Ok(Some(format!("structure invariant broken after recovery: {e}")));
    }
    Ok(None)
}

/// Fuzzes `trials` distinct crash points of `spec` (run under HERCULES on
/// `cfg`). Crash points are drawn from `seed`.
pub fn crash_fuzz(spec: &WorkloadSpec, cfg: &SimConfig, trials: u64, seed: u64) -> SimResult<FuzzReport> {
    if trials == 0 {
        return Err(SimError::Invalid("fuzz needs at least one trial".into()));
    }
    let events = probe_events(spec, cfg)?;
    let targets = SimRng::stream(seed, CRASH_STREAM).distinct_sorted(events, trials);
    crash_at_events(spec, cfg, &targets, seed, events)
}

/// Crashes the run at each of `targets` (ascending event indices).
pub fn crash_at_events(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    targets: &[u64],
    seed: u64,
    events: u64,
) -> SimResult<FuzzReport> {
    let mut rep = FuzzReport { workload: spec.kind.to_string(), seed, ops: spec.ops, events, ..Default::default() };
    drive(spec, cfg, targets, |c| {
        rep.trials += 1;
        rep.landed += u64::from(c.landed);
        let (op_index, event_index, kind) = (c.op_index, c.event_index, c.kind);
        if let Some(detail) = check(c, cfg)? {
            rep.violations.push(Violation {
                workload: spec.kind.to_string(),
                seed,
                event_index,
                event: Some(kind),
                op_index,
                detail,
            });
        }
        Ok(())
    })?;
    Ok(rep)
}

/// Replays one crash point. Returns the violation it produces, if any.
pub fn replay(spec: &WorkloadSpec, cfg: &SimConfig, event_index: u64) -> SimResult<Option<Violation>> {
    let rep = crash_at_events(spec, cfg, &[event_index], spec.seed, 0)?;
    if rep.trials == 0 {
        return Err(SimError::Invalid(format!("event {event_index} lies beyond the end of the run")));
    }
    Ok(rep.violations.into_iter().next())
}

/// The pmem image right after a crash at `event_index`, before recovery.
pub fn crash_image(spec: &WorkloadSpec, cfg: &SimConfig, event_index: u64) -> SimResult<PmemDevice> {
    let mut img = None;
    drive(spec, cfg, &[event_index], |c| {
        img = Some(c.pmem);
        Ok(())
    })?;
    img.ok_or_else(|| SimError::Invalid(format!("event {event_index} lies beyond the end of the run")))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdempotenceReport {
    pub checked: u64,
    /// (run crash event, recovery crash event) pairs whose final pmem differs.
    pub mismatches: Vec<(u64, u64)>,
}

/// For each of `crashes` crash points in the run, crashes recovery itself
/// at a random step, recovers again and compares the final dump byte for
/// byte with an uninterrupted recovery.
pub fn recovery_idempotence(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    crashes: u64,
    seed: u64,
) -> SimResult<IdempotenceReport> {
    let events = probe_events(spec, cfg)?;
    let mut rng = SimRng::stream(seed, CRASH_STREAM);
    let targets = rng.distinct_sorted(events, crashes);
    let mut rep = IdempotenceReport::default();
    drive(spec, cfg, &targets, |c| {
        let mut reference = c.pmem.clone();
        let mut ctl = CrashCtl::new();
        recover(&mut reference, &mut ctl)?;
        let k = rng.below(ctl.events().max(1));
        let mut twice = c.pmem;
        match recover(&mut twice, &mut CrashCtl::crash_at(k)) {
            Err(SimError::Crashed(_)) => {}
            Err(e) => return Err(e),
            Ok(_) => return Err(SimError::SimFault(format!("recovery finished before its event {k}"))),
        }
        recover(&mut twice, &mut CrashCtl::new())?;
        rep.checked += 1;
        if dump::encode(&twice) != dump::encode(&reference) {
            rep.mismatches.push((c.event_index, k));
        }
        Ok(())
    })?;
    Ok(rep)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcScenarioReport {
    /// Log entries in the window before collection.
    pub window: u64,
    /// Forced GC passes needed to collect the whole window.
    pub passes: u64,
    pub entries_moved: u64,
    pub entries_migrated: u64,
    /// Crash points enumerated (every GC event plus the point after).
    pub crash_points: u64,
    pub violations: Vec<(u64, String)>,
}

const GC_LINES_COMMITTED: u64 = 64;
const GC_LINES_ABORTED: u64 = 64;
const GC_LINES_OPEN: u64 = 64;
const GC_BASE: u64 = 0x2000_0000;

fn gc_line(group: u64, i: u64) -> u64 {
    GC_BASE + group * 0x10_0000 + i * 64
}

/// Builds a log window spanning at least three GC chunks: entries of a
/// transaction still open, committed unmigrated entries and entries of an
/// aborted transaction, then crashes at every event of the forced GC
/// passes that collect it and checks the recovered image.
pub fn gc_crash_scenario() -> SimResult<GcScenarioReport> {
    let cfg = SimConfig {
        gc_threshold: 1 << 20,
        migration_scan_period_instructions: u64::MAX / 2,
        ewpq_extension_factor: 64,
        ..SimConfig::stress()
    };
    let mut m = Machine::new(&cfg, true)?;
    m.tx_start(1)?;
    for i in 0..GC_LINES_OPEN {
        m.store_u64(1, gc_line(2, i), 0xc000 + i)?;
    }
    m.tx_start(0)?;
    for i in 0..GC_LINES_COMMITTED {
        m.store_u64(0, gc_line(0, i), 0xa000 + i)?;
    }
    m.tx_commit(0)?;
    m.tx_start(0)?;
    for i in 0..GC_LINES_ABORTED {
        m.store_u64(0, gc_line(1, i), 0xb000 + i)?;
    }
    m.tx_abort(0)?;
    let window = m.mc.log_head() - m.mc.log_tail();
    if window < 3 * cfg.gc_chunk {
        return Err(SimError::SimFault(format!("scenario built a window of only {window} entries ({:?})", m.mc.counters)));
    }

    let mut rep = GcScenarioReport { window, ..Default::default() };
    let base = m.crash.events();
    // Collect until the tail has passed every entry of the original window.
    let mut full = m.clone();
    let window_end = m.mc.log_head();
    while full.mc.log_tail() < window_end {
        let g = full.force_gc()?;
        rep.passes += 1;
        rep.entries_moved += g.entries_moved;
        rep.entries_migrated += g.entries_migrated;
        if rep.passes > window {
            return Err(SimError::SimFault("garbage collection makes no progress".into()));
        }
    }
    let span = full.crash.events() - base;

    let expect = |i: u64, group: u64| match group {
        0 => 0xa000 + i,
        _ => 0,
    };
    for k in base..=base + span {
        rep.crash_points += 1;
        let mut c = m.clone();
        c.crash.schedule(Some(k));
        let mut crashed = false;
        for _ in 0..rep.passes {
            match c.force_gc() {
                Ok(_) => {}
                Err(SimError::Crashed(_)) => {
                    crashed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !crashed && k < base + span {
            rep.violations.push((k, "crash point not reached".into()));
            continue;
        }
        let (pmem, _) = c.power_off(false);
        let pmem = dump::decode(&dump::encode(&pmem))?;
        let r = match boot(&cfg, pmem, true) {
            Ok((r, _)) => r,
            Err(e) => {
                rep.violations.push((k, format!("recovery failed: {e}")));
                continue;
            }
        };
        let groups = [(0, GC_LINES_COMMITTED), (1, GC_LINES_ABORTED), (2, GC_LINES_OPEN)];
        'check: for (g, n) in groups {
            for i in 0..n {
                let got = r.peek_u64(gc_line(g, i));
                if got != expect(i, g) {
                    rep.violations.push((k, format!("group {g} line {i} holds {got:#x}")));
                    break 'check;
                }
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_linked_list_fuzz_is_clean() {
        let spec = fuzz_spec(WorkloadKind::LinkedList, 60, 3);
        let rep = crash_fuzz(&spec, &SimConfig::stress(), 200, 3).unwrap();
        assert_eq!(rep.trials, 200);
        assert!(rep.passed(), "{:?}", rep.violations.first());
        assert!(rep.landed > 0);
    }

    #[test]
    fn both_sides_of_the_txlen_write_are_consistent() {
        let spec = fuzz_spec(WorkloadKind::Bptree, 40, 5);
        let cfg = SimConfig::stress();
        let stream = generate(&spec).unwrap();
        let mut ex = Executor::new(Design::Hercules, &cfg).unwrap();
        let mut s = new_structure(&spec);
        ex.populate(s.as_mut(), &stream.setup).unwrap();
        for (i, op) in stream.ops.iter().enumerate() {
            ex.run_op(i % 2, s.as_mut(), op).unwrap();
        }
        let commits: Vec<u64> = ex.machine.crash.landed_commits().iter().map(|c| c.0).collect();
        assert_eq!(commits.len(), 40);
        let targets: Vec<u64> = commits.iter().flat_map(|&e| [e, e + 1]).collect();
        let rep = crash_at_events(&spec, &cfg, &targets, 5, 0).unwrap();
        assert_eq!(rep.trials, 80);
        assert_eq!(rep.landed, 40);
        assert!(rep.passed(), "{:?}", rep.violations.first());
    }

    #[test]
    fn gc_scenario_covers_every_entry_kind() {
        let rep = gc_crash_scenario().unwrap();
        assert!(rep.window >= 24);
        assert!(rep.entries_moved > 0 && rep.entries_migrated > 0);
        assert!(rep.violations.is_empty(), "{:?}", rep.violations.first());
    }

    #[test]
    fn zero_trials_rejected() {
        let spec = fuzz_spec(WorkloadKind::Bptree, 10, 1);
        assert!(crash_fuzz(&spec, &SimConfig::stress(), 0, 1).is_err());
    }

    #[test]
    fn crash_points_are_reproducible() {
        let spec = fuzz_spec(WorkloadKind::HashTable, 40, 9);
        let a = crash_fuzz(&spec, &SimConfig::stress(), 30, 9).unwrap();
        let b = crash_fuzz(&spec, &SimConfig::stress(), 30, 9).unwrap();
        assert_eq!(a, b);
    }
}
