//! Shared fixtures for the simulator benchmarks.

use hercules_core::{WorkloadKind, WorkloadSpec};

/// Ops per benchmark iteration. Small enough that one iteration stays
/// well under a second on the default machine.
pub const OPS: u64 = 2000;

/// A workload with a reduced initial image so setup does not dominate.
pub fn small_spec(kind: WorkloadKind) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(kind, OPS, 1);
    if kind != WorkloadKind::ArraySwap {
        s.initial = s.initial.min(4096);
    }
    s
}
