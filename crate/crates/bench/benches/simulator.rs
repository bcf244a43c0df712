use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hercules_bench::small_spec;
use hercules_core::{dump, run_workload, run_workload_image, Design, SimConfig, WorkloadKind};

fn workloads(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let mut g = c.benchmark_group("workload");
    g.sample_size(10);
    for kind in [WorkloadKind::HashTable, WorkloadKind::Bptree, WorkloadKind::LinkedList] {
        let spec = small_spec(kind);
        for d in Design::ALL {
            g.bench_function(format!("{}/{d}", kind.name()), |b| {
                b.iter(|| run_workload(black_box(&spec), d, &cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn dump_codec(c: &mut Criterion) {
    let (_, pmem) = run_workload_image(&small_spec(WorkloadKind::RbTree), Design::Hercules, &SimConfig::default()).unwrap();
    let bytes = dump::encode(&pmem);
    c.bench_function("dump/encode", |b| b.iter(|| dump::encode(black_box(&pmem))));
    c.bench_function("dump/decode", |b| b.iter(|| dump::decode(black_box(&bytes)).unwrap()));
}

criterion_group!(benches, workloads, dump_codec);
criterion_main!(benches);
