use hercules_core::workloads::{generate, Design};
use hercules_core::{run_workload, SimConfig, WorkloadKind, WorkloadSpec};

#[test]
fn every_benchmark_matches_its_reference_under_every_design() {
    let cfg = SimConfig::stress();
    for kind in WorkloadKind::BENCHMARKS {
        let mut spec = WorkloadSpec::new(kind, 300, 5);
        spec.initial = spec.initial.min(256);
        if kind == WorkloadKind::ArraySwap {
            spec.initial = 64;
        }
        for design in Design::ALL {
            let st = run_workload(&spec, design, &cfg).unwrap_or_else(|e| panic!("{kind} {design}: {e}"));
            assert_eq!(st.ops, 300);
            assert_eq!(st.tx.started, st.tx.committed + st.tx.aborted);
            if design == Design::Opt {
                assert_eq!(st.pmem_bytes.log_zone(), 0, "{kind}");
                assert_eq!(st.tx.started, 0);
            }
        }
    }
}

#[test]
fn two_threads_interleave_on_separate_cores() {
    let mut spec = WorkloadSpec::new(WorkloadKind::HashTable, 400, 2);
    spec.threads = 2;
    let st = run_workload(&spec, Design::Hercules, &SimConfig::stress()).unwrap();
    assert_eq!(st.threads, 2);
    assert_eq!(st.tx.committed, 400);
}

#[test]
fn streams_do_not_depend_on_design() {
    let spec = WorkloadSpec::new(WorkloadKind::Bptree, 500, 11);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.ops, b.ops);
    let mut other = spec.clone();
    other.seed = 12;
    assert_ne!(generate(&other).unwrap().ops, a.ops);
}

#[test]
fn huge_tx_reports_its_length() {
    let spec = hercules_core::synthetic_huge_tx(1);
    let st = run_workload(&spec, Design::Hercules, &SimConfig::default()).unwrap();
    assert_eq!(st.txlen.max, 1);
    let spec = hercules_core::synthetic_huge_tx(100);
    let st = run_workload(&spec, Design::Hercules, &SimConfig::stress()).unwrap();
    assert_eq!((st.txlen.min, st.txlen.max), (100, 100));
}
