//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (bypassing the harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;

use hercules_core::fuzz::{gc_crash_scenario, recovery_idempotence};
use hercules_core::pmem::PmemArea;
use hercules_core::rng::SimRng;
use hercules_core::{
    crash_fuzz, emit, fuzz_spec, run_workload, synthetic_huge_tx, Design, Format, Machine, SimConfig, SimStats,
    WorkloadKind, WorkloadSpec,
};

const BENCH_OPS: u64 = 100_000;
const FUZZ_OPS: u64 = 5000;
const FUZZ_TRIALS_EACH: u64 = 3334;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

/// Per benchmark: [HERCULES, OPT, SWL_EADR] at the default configuration.
fn bench_runs() -> &'static Vec<(WorkloadKind, [SimStats; 3])> {
    static RUNS: OnceLock<Vec<(WorkloadKind, [SimStats; 3])>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = SimConfig::default();
        WorkloadKind::BENCHMARKS
            .into_iter()
            .map(|k| {
                let spec = WorkloadSpec::new(k, BENCH_OPS, 1);
                let run = |d| run_workload(&spec, d, &cfg).unwrap();
                (k, [run(Design::Hercules), run(Design::Opt), run(Design::SwlEadr)])
            })
            .collect()
    })
}

fn geomean(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

#[test]
fn c01_crash_fuzz_has_no_violations() {
    let cfg = SimConfig::stress();
    let mut trials = 0;
    let mut bad = Vec::new();
    for (i, k) in [WorkloadKind::LinkedList, WorkloadKind::Bptree, WorkloadKind::HashTable].into_iter().enumerate() {
        let seed = 100 + i as u64;
        let rep = crash_fuzz(&fuzz_spec(k, FUZZ_OPS, seed), &cfg, FUZZ_TRIALS_EACH, seed).unwrap();
        trials += rep.trials;
        bad.extend(rep.violations);
    }
    let detail = format!("{trials} trials, {} violations", bad.len());
    if let Some(v) = bad.first() {
        eprintln!("first violation: {v:?}");
    }
    verdict(1, "crash consistency", trials >= 10_000 && bad.is_empty(), &detail);
}

#[test]
fn c02_recovery_is_idempotent() {
    let cfg = SimConfig::stress();
    let spec = fuzz_spec(WorkloadKind::Bptree, 2000, 11);
    let rep = recovery_idempotence(&spec, &cfg, 1000, 11).unwrap();
    let detail = format!("{} crashed recoveries, {} mismatched images", rep.checked, rep.mismatches.len());
    verdict(2, "recovery idempotence", rep.checked == 1000 && rep.mismatches.is_empty(), &detail);
}

#[test]
fn c03_gc_crash_window_is_safe() {
    let rep = gc_crash_scenario().unwrap();
    let detail = format!(
        "{} crash points over {} GC passes ({} moved, {} migrated), {} violations",
        rep.crash_points,
        rep.passes,
        rep.entries_moved,
        rep.entries_migrated,
        rep.violations.len()
    );
    let covered = rep.entries_moved > 0 && rep.entries_migrated > 0 && rep.crash_points > 0;
    verdict(3, "GC crash window", covered && rep.violations.is_empty(), &detail);
}

#[test]
fn c04_hercules_writes_less_pmem_than_swl() {
    let ratios: Vec<(WorkloadKind, f64)> = bench_runs()
        .iter()
        .map(|(k, [h, _, s])| (*k, h.pmem_bytes_total as f64 / s.pmem_bytes_total as f64))
        .collect();
    let worst = ratios.iter().cloned().fold((WorkloadKind::ArraySwap, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let gm = geomean(&ratios.iter().map(|r| r.1).collect::<Vec<_>>());
    let detail = format!("max ratio {:.3} ({}), geomean {gm:.3}", worst.1, worst.0.name());
    verdict(4, "pmem write reduction", worst.1 <= 0.60 && gm <= 0.45, &detail);
}

#[test]
fn c05_throughput_ordering() {
    let mut ordered = true;
    let (mut h_total, mut o_total) = (0u64, 0u64);
    for (k, [h, o, s]) in bench_runs() {
        if !(o.cycles <= h.cycles && h.cycles < s.cycles) {
            eprintln!("{}: OPT {} HERCULES {} SWL {}", k.name(), o.cycles, h.cycles, s.cycles);
            ordered = false;
        }
        h_total += h.cycles;
        o_total += o.cycles;
    }
    let r = h_total as f64 / o_total as f64;
    let detail = format!("OPT <= HERCULES < SWL on every benchmark: {ordered}, HERCULES/OPT cycles {r:.3}");
    verdict(5, "throughput ordering", ordered && r <= 1.25, &detail);
}

#[test]
fn c06_bounded_ewpq_degrades_gracefully() {
    let sizes = [1000u64, 10_000, 30_000, 60_000];
    let series = |unbounded: bool| -> Vec<f64> {
        sizes
            .iter()
            .map(|&lines| {
                let mut cfg = SimConfig::shrunk_8x();
                cfg.ewpq_extension_factor = 128;
                cfg.ewpq_entries = 512;
                cfg.ewpq_unbounded = unbounded;
                let mut spec = synthetic_huge_tx(lines);
                spec.ops = 1;
                run_workload(&spec, Design::Hercules, &cfg).unwrap().writes_per_us
            })
            .collect()
    };
    let bounded = series(false);
    let unbounded = series(true);
    let drop = 1.0 - bounded[3] / unbounded[3];
    let monotone = bounded.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!("drop at 60k lines {:.1}%, 512-entry writes/us {bounded:.1?}", drop * 100.0);
    verdict(6, "premature flush stress", (0.15..=0.50).contains(&drop) && monotone, &detail);
}

#[test]
fn c07_state_reset_hurts_hash_table_more() {
    let drop = |k: WorkloadKind| {
        let spec = WorkloadSpec::new(k, BENCH_OPS, 1);
        let tp = |reset: u64| {
            let cfg = SimConfig { state_reset_cycles: reset, ..SimConfig::default() };
            run_workload(&spec, Design::Hercules, &cfg).unwrap().throughput_tx_per_us
        };
        1.0 - tp(90) / tp(0)
    };
    let (ht, rb) = (drop(WorkloadKind::HashTable), drop(WorkloadKind::RbTree));
    let detail = format!("throughput drop 0->90 cycles: hash_table {:.2}%, rb_tree {:.2}%", ht * 100.0, rb * 100.0);
    verdict(7, "state reset sensitivity", ht > rb, &detail);
}

#[test]
fn c08_pmem_latency_sensitivity() {
    let spec = WorkloadSpec::new(WorkloadKind::LinkedList, BENCH_OPS, 1);
    let tps = |d: Design| -> Vec<f64> {
        [100u64, 300, 500]
            .iter()
            .map(|&ns| {
                let cfg = SimConfig { pmem_write_ns: ns, ..SimConfig::default() };
                run_workload(&spec, d, &cfg).unwrap().throughput_tx_per_us
            })
            .collect()
    };
    let h = tps(Design::Hercules);
    let s = tps(Design::SwlEadr);
    let max = h.iter().cloned().fold(f64::MIN, f64::max);
    let min = h.iter().cloned().fold(f64::MAX, f64::min);
    let h_var = max / min - 1.0;
    let s_drop = 1.0 - s[2] / s[0];
    let detail = format!("HERCULES variation {:.2}%, SWL degradation {:.1}%", h_var * 100.0, s_drop * 100.0);
    verdict(8, "pmem latency sensitivity", h_var < 0.05 && s_drop > 0.15, &detail);
}

#[test]
fn c09_runs_are_deterministic() {
    let cfg = SimConfig::default();
    let mut same = true;
    for (k, d) in [(WorkloadKind::Bptree, Design::Hercules), (WorkloadKind::KvMixed, Design::SwlEadr)] {
        let mut spec = WorkloadSpec::new(k, 20_000, 5);
        spec.threads = 2;
        let once = || emit(&[run_workload(&spec, d, &cfg).unwrap()], Format::Json).unwrap();
        same &= once() == once();
    }
    verdict(9, "determinism", same, &format!("byte-identical JSON across repeated runs: {same}"));
}

#[test]
fn c10_commit_writes_only_the_profile() {
    let cfg = SimConfig::default();
    let mut m = Machine::new(&cfg, true).unwrap();
    let mut rng = SimRng::new(42);
    let mut bad = 0;
    for tx in 0..1000u64 {
        m.tx_start(0).unwrap();
        for _ in 0..rng.range(1, 9) {
            m.store_u64(0, 0x4000 + rng.below(64) * 64, tx).unwrap();
        }
        m.pmem_mut().enable_monitor();
        m.tx_commit(0).unwrap();
        let w = m.pmem_mut().take_monitor();
        if !(w.len() == 1 && w[0].area == PmemArea::Profile && w[0].len == 4) {
            bad += 1;
        }
    }
    verdict(10, "commit cost", bad == 0, &format!("1000 commits, {bad} wrote anything besides one 4-byte profile"));
}
