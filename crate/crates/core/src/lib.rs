//! Cycle-approximate simulator of hardware transaction logging on an
//! eADR-backed persistent memory system.

pub mod addr;
pub mod cache;
pub mod clock;
pub mod config;
pub mod crash;
pub mod dump;
pub mod error;
pub mod event;
pub mod fuzz;
pub mod machine;
pub mod mc;
pub mod pmem;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tx;
pub mod workloads;

pub use addr::{Address, LINE_BYTES};
pub use crash::{boot, recover, PowerOffReport, RecoveryReport};
pub use config::{load_config, load_config_over, load_config_with_overrides, CacheLevelConfig, ConfigError, SimConfig, StateResetMode};
pub use error::{SimError, SimResult};
pub use event::{CrashCtl, Crashed, EventKind};
pub use machine::{Level, Machine};
pub use mc::MemoryController;
pub use pmem::{PmemDevice, PmemError};
pub use stats::{percentile, SimStats, StatsError};
pub use tx::{CommitReport, SavedContext, TxContext, TxPhase};
pub use workloads::{run_sweep, run_workload, run_workload_image, synthetic_huge_tx, Design, SweepAxis, WorkloadKind, WorkloadSpec};
pub use dump::DumpSummary;
pub use fuzz::{crash_fuzz, fuzz_spec, FuzzReport, Violation};
pub use report::{compare_designs, emit, parse, Comparison, Format};
