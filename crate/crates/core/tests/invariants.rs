use std::collections::HashMap;

use hercules_core::{boot, dump, emit, parse, percentile, Format, Machine, SimConfig, SimResult};
use proptest::prelude::*;

const BASE: u64 = 0x80_0000;

/// One transaction: (line, value) stores, then commit or abort.
type Tx = (Vec<(u64, u64)>, bool);
type Words = HashMap<u64, u64>;

fn txs() -> impl Strategy<Value = Vec<Tx>> {
    prop::collection::vec((prop::collection::vec((0u64..200, 1u64..u64::MAX), 1..40), any::<bool>()), 1..12)
}

fn addr(line: u64) -> u64 {
    BASE + line * 64
}

/// Runs `txs` on one core until done or crashed. Returns the committed
/// words, plus the before/after pair when the crash hit inside a commit and
/// either outcome is allowed.
fn drive(m: &mut Machine, txs: &[Tx]) -> (Words, Option<(Words, Words)>) {
    let mut durable = Words::new();
    for (stores, commit) in txs {
        let mut pending = HashMap::new();
        let step = |m: &mut Machine, pending: &mut HashMap<u64, u64>| -> SimResult<()> {
            m.tx_start(0)?;
            for &(l, v) in stores {
                m.store_u64(0, addr(l), v)?;
                pending.insert(l, v);
            }
            Ok(())
        };
        if let Err(e) = step(m, &mut pending) {
            assert!(e.is_crash(), "{e}");
            return (durable, None);
        }
        if !*commit {
            if let Err(e) = m.tx_abort(0) {
                assert!(e.is_crash(), "{e}");
                return (durable, None);
            }
            continue;
        }
        match m.tx_commit(0) {
            Ok(_) => durable.extend(pending),
            Err(e) => {
                assert!(e.is_crash(), "{e}");
                let mut post = durable.clone();
                post.extend(pending);
                return (durable.clone(), Some((durable, post)));
            }
        }
    }
    (durable, None)
}

fn word(m: &Machine, line: u64) -> u64 {
    m.peek_u64(addr(line))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn percentile_matches_sorted_rank(mut xs in prop::collection::vec(any::<u64>(), 1..300), k in 1u64..100_000) {
        let p = k as f64 / 1000.0;
        let got = percentile(&xs, p).unwrap();
        xs.sort();
        let rank = (k * xs.len() as u64).div_ceil(100_000).max(1) as usize;
        prop_assert_eq!(got, xs[rank - 1]);
    }

    #[test]
    fn crash_anywhere_keeps_transactions_atomic(txs in txs(), frac in 0.0f64..1.0) {
        let cfg = SimConfig::stress();
        let mut probe = Machine::new(&cfg, true).unwrap();
        drive(&mut probe, &txs);
        let events = probe.crash.events();

        let mut m = Machine::new(&cfg, true).unwrap();
        m.crash.schedule(Some((events as f64 * frac) as u64));
        let (durable, in_commit) = drive(&mut m, &txs);
        m.check_invariants().map_err(TestCaseError::fail)?;
        let (pmem, _) = m.power_off(false);
        let bytes = dump::encode(&pmem);
        let pmem = dump::decode(&bytes).unwrap();
        prop_assert_eq!(dump::encode(&pmem), bytes);
        let (m, _) = boot(&cfg, pmem, true).unwrap();

        let lines: Vec<u64> = txs.iter().flat_map(|t| t.0.iter().map(|s| s.0)).collect();
        let expect = |map: &Words| lines.iter().all(|l| word(&m, *l) == map.get(l).copied().unwrap_or(0));
        match in_commit {
            None => prop_assert!(expect(&durable)),
            Some((pre, post)) => prop_assert!(expect(&pre) || expect(&post)),
        }
    }

    #[test]
    fn results_round_trip_through_both_formats(seed in 0u64..1000, ops in 1u64..60) {
        let mut spec = hercules_core::WorkloadSpec::new(hercules_core::WorkloadKind::RbTree, ops, seed);
        spec.initial = 64;
        let s = hercules_core::run_workload(&spec, hercules_core::Design::Hercules, &SimConfig::stress()).unwrap();
        for f in [Format::Json, Format::Csv] {
            let text = emit(std::slice::from_ref(&s), f).unwrap();
            let back = parse(&text, f).unwrap();
            prop_assert_eq!(emit(&back, f).unwrap(), text);
        }
    }
}
