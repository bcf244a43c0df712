//! Per-run metrics and nearest-rank percentiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pmem::{PmemArea, PmemCounters};

/// Version of the serialized result schema; bump on any field change.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile {0} outside (0, 100)")]
    InvalidPercentile(f64),
    #[error("runs cannot be compared: {0}")]
    MismatchedRuns(String),
    #[error("result document: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nearest-rank percentile: the smallest sample such that at least `p`
/// percent of the samples are less than or equal to it.
pub fn percentile(samples: &[u64], p: f64) -> Result<u64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(StatsError::InvalidPercentile(p));
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    Ok(v[nearest_rank(v.len(), p) - 1])
}

/// 1-based rank `ceil(p/100 * n)`, computed in integers where possible so
/// that e.g. p = 99.9 over 1000 samples gives exactly 999.
fn nearest_rank(n: usize, p: f64) -> usize {
    // p has at most a few decimals in practice; scale by 10^6 to stay exact.
    let scaled = (p * 1e6).round() as u128;
    let rank = (scaled * n as u128).div_ceil(100 * 1_000_000);
    (rank as usize).clamp(1, n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmemBytes {
    pub home: u64,
    pub log: u64,
    pub profile: u64,
    pub extension: u64,
    pub emergency: u64,
    pub metadata: u64,
}

impl PmemBytes {
    pub fn from_counters(c: &PmemCounters) -> Self {
        PmemBytes {
            home: c.written(PmemArea::Home),
            log: c.written(PmemArea::Log),
            profile: c.written(PmemArea::Profile),
            extension: c.written(PmemArea::Extension),
            emergency: c.written(PmemArea::Emergency),
            metadata: c.written(PmemArea::Metadata),
        }
    }

    pub fn total(&self) -> u64 {
        self.home + self.log + self.profile + self.extension + self.emergency + self.metadata
    }

    /// Bytes outside the home range.
    pub fn log_zone(&self) -> u64 {
        self.total() - self.home
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxCounts {
    pub started: u64,
    pub committed: u64,
    pub aborted: u64,
}

/// Per-operation latency in cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub p50: u64,
    pub p99: u64,
    pub p999: u64,
    pub max: u64,
}

impl LatencySummary {
    pub fn from_samples(s: &[u64]) -> Self {
        if s.is_empty() {
            return Self::default();
        }
        let p = |q| percentile(s, q).expect("non-empty");
        LatencySummary {
            samples: s.len() as u64,
            p50: p(50.0),
            p99: p(99.0),
            p999: p(99.9),
            max: s.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TxLenStats {
    pub min: u64,
    pub max: u64,
    pub mean: f64,
}

impl TxLenStats {
    pub fn from_lens(lens: &[u64]) -> Self {
        if lens.is_empty() {
            return Self::default();
        }
        TxLenStats {
            min: lens.iter().copied().min().unwrap_or(0),
            max: lens.iter().copied().max().unwrap_or(0),
            mean: lens.iter().sum::<u64>() as f64 / lens.len() as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub premature_flushes: u64,
    pub migrations: u64,
    pub gc_runs: u64,
    pub spills: u64,
    pub forced_transactional_evictions: u64,
    pub truncation_collisions: u64,
    pub wpq_stall_cycles: u64,
    pub state_reset_cycles: u64,
}

/// Everything measured in one run. All counters cover the measured phase
/// only; setup work and the final shutdown flush are excluded (the latter
/// is reported separately in `shutdown_bytes`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub workload: String,
    pub design: String,
    pub seed: u64,
    pub ops: u64,
    pub threads: u64,
    /// Sweep axis and value, empty and 0 outside sweeps.
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub clock_ghz: f64,
    pub cycles: u64,
    pub instructions: u64,
    pub loads: u64,
    pub stores: u64,
    /// Stores issued by the data structure itself (excludes log records).
    pub logical_writes: u64,
    pub pmem_bytes: PmemBytes,
    pub pmem_bytes_total: u64,
    pub shutdown_bytes: u64,
    pub cache: [CacheStats; 3],
    pub tx: TxCounts,
    pub latency: LatencySummary,
    pub txlen: TxLenStats,
    pub counters: EventCounters,
    pub throughput_tx_per_us: f64,
    pub writes_per_us: f64,
}

impl SimStats {
    pub fn micros(&self) -> f64 {
        crate::clock::cycles_to_us(self.cycles, self.clock_ghz)
    }

    /// Fills the derived rate fields from `cycles`.
    pub fn finish(&mut self) {
        self.pmem_bytes_total = self.pmem_bytes.total();
        let us = self.micros();
        let per_us = |n: u64| if us > 0.0 { n as f64 / us } else { 0.0 };
        self.throughput_tx_per_us = per_us(self.ops);
        self.writes_per_us = per_us(self.logical_writes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let a: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&a, 99.0).unwrap(), 99);
        let b: Vec<u64> = (1..=1000).collect();
        assert_eq!(percentile(&b, 99.9).unwrap(), 999);
        assert_eq!(percentile(&[7], 12.5).unwrap(), 7);
        assert!(matches!(percentile(&[], 50.0), Err(StatsError::EmptySamples)));
        assert!(percentile(&[1], 100.0).is_err());
    }

    #[test]
    fn percentile_ignores_input_order() {
        let mut v: Vec<u64> = (1..=57).rev().collect();
        let p = percentile(&v, 90.0).unwrap();
        v.sort_unstable();
        assert_eq!(p, percentile(&v, 90.0).unwrap());
    }
}
