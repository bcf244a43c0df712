//! Result documents (JSON and CSV) and design comparison tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stats::{
    CacheStats, EventCounters, LatencySummary, PmemBytes, SimStats, StatsError, TxCounts, TxLenStats, SCHEMA_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(StatsError::Parse(format!("unknown format `{s}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub schema_version: u32,
    pub runs: Vec<SimStats>,
}

/// One CSV row: `SimStats` flattened, prefixed by the schema version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Row {
    schema_version: u32,
    workload: String,
    design: String,
    seed: u64,
    ops: u64,
    threads: u64,
    sweep_axis: String,
    sweep_value: f64,
    clock_ghz: f64,
    cycles: u64,
    instructions: u64,
    loads: u64,
    stores: u64,
    logical_writes: u64,
    pmem_home: u64,
    pmem_log: u64,
    pmem_profile: u64,
    pmem_extension: u64,
    pmem_emergency: u64,
    pmem_metadata: u64,
    pmem_bytes_total: u64,
    shutdown_bytes: u64,
    l1_accesses: u64,
    l1_hits: u64,
    l1_misses: u64,
    l2_accesses: u64,
    l2_hits: u64,
    l2_misses: u64,
    llc_accesses: u64,
    llc_hits: u64,
    llc_misses: u64,
    tx_started: u64,
    tx_committed: u64,
    tx_aborted: u64,
    latency_samples: u64,
    latency_p50: u64,
    latency_p99: u64,
    latency_p999: u64,
    latency_max: u64,
    txlen_min: u64,
    txlen_max: u64,
    txlen_mean: f64,
    premature_flushes: u64,
    migrations: u64,
    gc_runs: u64,
    spills: u64,
    forced_transactional_evictions: u64,
    truncation_collisions: u64,
    wpq_stall_cycles: u64,
    state_reset_cycles: u64,
    throughput_tx_per_us: f64,
    writes_per_us: f64,
}

impl From<&SimStats> for Row {
    fn from(s: &SimStats) -> Self {
        let [l1, l2, llc] = s.cache;
        Row {
            schema_version: SCHEMA_VERSION,
            workload: s.workload.clone(),
            design: s.design.clone(),
            seed: s.seed,
            ops: s.ops,
            threads: s.threads,
            sweep_axis: s.sweep_axis.clone(),
            sweep_value: s.sweep_value,
            clock_ghz: s.clock_ghz,
            cycles: s.cycles,
            instructions: s.instructions,
            loads: s.loads,
            stores: s.stores,
            logical_writes: s.logical_writes,
            pmem_home: s.pmem_bytes.home,
            pmem_log: s.pmem_bytes.log,
            pmem_profile: s.pmem_bytes.profile,
            pmem_extension: s.pmem_bytes.extension,
            pmem_emergency: s.pmem_bytes.emergency,
            pmem_metadata: s.pmem_bytes.metadata,
            pmem_bytes_total: s.pmem_bytes_total,
            shutdown_bytes: s.shutdown_bytes,
            l1_accesses: l1.accesses,
            l1_hits: l1.hits,
            l1_misses: l1.misses,
            l2_accesses: l2.accesses,
            l2_hits: l2.hits,
            l2_misses: l2.misses,
            llc_accesses: llc.accesses,
            llc_hits: llc.hits,
            llc_misses: llc.misses,
            tx_started: s.tx.started,
            tx_committed: s.tx.committed,
            tx_aborted: s.tx.aborted,
            latency_samples: s.latency.samples,
            latency_p50: s.latency.p50,
            latency_p99: s.latency.p99,
            latency_p999: s.latency.p999,
            latency_max: s.latency.max,
            txlen_min: s.txlen.min,
            txlen_max: s.txlen.max,
            txlen_mean: s.txlen.mean,
            premature_flushes: s.counters.premature_flushes,
            migrations: s.counters.migrations,
            gc_runs: s.counters.gc_runs,
            spills: s.counters.spills,
            forced_transactional_evictions: s.counters.forced_transactional_evictions,
            truncation_collisions: s.counters.truncation_collisions,
            wpq_stall_cycles: s.counters.wpq_stall_cycles,
            state_reset_cycles: s.counters.state_reset_cycles,
            throughput_tx_per_us: s.throughput_tx_per_us,
            writes_per_us: s.writes_per_us,
        }
    }
}

impl From<Row> for SimStats {
    fn from(r: Row) -> Self {
        let cache = |accesses, hits, misses| CacheStats { accesses, hits, misses };
        SimStats {
            workload: r.workload,
            design: r.design,
            seed: r.seed,
            ops: r.ops,
            threads: r.threads,
            sweep_axis: r.sweep_axis,
            sweep_value: r.sweep_value,
            clock_ghz: r.clock_ghz,
            cycles: r.cycles,
            instructions: r.instructions,
            loads: r.loads,
            stores: r.stores,
            logical_writes: r.logical_writes,
            pmem_bytes: PmemBytes {
                home: r.pmem_home,
                log: r.pmem_log,
                profile: r.pmem_profile,
                extension: r.pmem_extension,
                emergency: r.pmem_emergency,
                metadata: r.pmem_metadata,
            },
            pmem_bytes_total: r.pmem_bytes_total,
            shutdown_bytes: r.shutdown_bytes,
            cache: [
                cache(r.l1_accesses, r.l1_hits, r.l1_misses),
                cache(r.l2_accesses, r.l2_hits, r.l2_misses),
                cache(r.llc_accesses, r.llc_hits, r.llc_misses),
            ],
            tx: TxCounts { started: r.tx_started, committed: r.tx_committed, aborted: r.tx_aborted },
            latency: LatencySummary {
                samples: r.latency_samples,
                p50: r.latency_p50,
                p99: r.latency_p99,
                p999: r.latency_p999,
                max: r.latency_max,
            },
            txlen: TxLenStats { min: r.txlen_min, max: r.txlen_max, mean: r.txlen_mean },
            counters: EventCounters {
                premature_flushes: r.premature_flushes,
                migrations: r.migrations,
                gc_runs: r.gc_runs,
                spills: r.spills,
                forced_transactional_evictions: r.forced_transactional_evictions,
                truncation_collisions: r.truncation_collisions,
                wpq_stall_cycles: r.wpq_stall_cycles,
                state_reset_cycles: r.state_reset_cycles,
            },
            throughput_tx_per_us: r.throughput_tx_per_us,
            writes_per_us: r.writes_per_us,
        }
    }
}

fn csv_err(e: csv::Error) -> StatsError {
    StatsError::Parse(e.to_string())
}

pub fn emit(runs: &[SimStats], format: Format) -> Result<String, StatsError> {
    match format {
        Format::Json => {
            let doc = ResultDoc { schema_version: SCHEMA_VERSION, runs: runs.to_vec() };
            let mut s = serde_json::to_string_pretty(&doc).map_err(|e| StatsError::Parse(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if runs.is_empty() {
                // Header only: serialize a zeroed row's field names.
                let mut h = csv::Writer::from_writer(Vec::new());
                h.serialize(Row::from(&SimStats::default())).map_err(csv_err)?;
                let bytes = h.into_inner().map_err(|e| StatsError::Parse(e.to_string()))?;
                let text = String::from_utf8(bytes).expect("csv is utf-8");
                return Ok(text.lines().next().unwrap_or_default().to_string() + "\n");
            }
            for r in runs {
                w.serialize(Row::from(r)).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| StatsError::Parse(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is utf-8"))
        }
    }
}

pub fn parse(text: &str, format: Format) -> Result<Vec<SimStats>, StatsError> {
    match format {
        Format::Json => {
            let doc: ResultDoc = serde_json::from_str(text).map_err(|e| StatsError::Parse(e.to_string()))?;
            if doc.schema_version != SCHEMA_VERSION {
                return Err(StatsError::Parse(format!("schema version {} (expected {SCHEMA_VERSION})", doc.schema_version)));
            }
            Ok(doc.runs)
        }
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            let mut out = Vec::new();
            for row in rd.deserialize::<Row>() {
                let row = row.map_err(csv_err)?;
                if row.schema_version != SCHEMA_VERSION {
                    return Err(StatsError::Parse(format!("schema version {} (expected {SCHEMA_VERSION})", row.schema_version)));
                }
                out.push(row.into());
            }
            Ok(out)
        }
    }
}

/// Guesses the format of a result file from its first non-blank byte.
pub fn sniff(text: &str) -> Format {
    if text.trim_start().starts_with('{') {
        Format::Json
    } else {
        Format::Csv
    }
}

/// One design's metrics relative to the baseline design of the same run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub workload: String,
    pub design: String,
    pub baseline: String,
    pub sweep_axis: String,
    pub sweep_value: f64,
    /// Throughput over the baseline's.
    pub throughput_ratio: f64,
    pub cycles_ratio: f64,
    /// Pmem bytes over the baseline's; `None` when the baseline wrote none.
    pub pmem_ratio: Option<f64>,
    pub p99_ratio: Option<f64>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

type RunKey = (String, u64, u64, String, u64);

fn key(s: &SimStats) -> RunKey {
    (s.workload.clone(), s.seed, s.ops, s.sweep_axis.clone(), s.sweep_value.to_bits())
}

/// Normalizes every run against the run of `baseline` with the same
/// workload, seed, op count and sweep point.
pub fn compare_designs(runs: &[SimStats], baseline: &str) -> Result<Vec<Comparison>, StatsError> {
    if runs.is_empty() {
        return Err(StatsError::MismatchedRuns("no runs given".into()));
    }
    let mut base: BTreeMap<RunKey, &SimStats> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.design.eq_ignore_ascii_case(baseline)) {
        if base.insert(key(r), r).is_some() {
            return Err(StatsError::MismatchedRuns(format!("{} has two {baseline} runs", r.workload)));
        }
    }
    runs.iter()
        .map(|r| {
            let b = base.get(&key(r)).ok_or_else(|| {
                StatsError::MismatchedRuns(format!(
                    "no {baseline} run for {} (seed {}, {} ops{})",
                    r.workload,
                    r.seed,
                    r.ops,
                    if r.sweep_axis.is_empty() { String::new() } else { format!(", {}={}", r.sweep_axis, r.sweep_value) }
                ))
            })?;
            let tp = if b.throughput_tx_per_us > 0.0 { r.throughput_tx_per_us / b.throughput_tx_per_us } else { 0.0 };
            Ok(Comparison {
                workload: r.workload.clone(),
                design: r.design.clone(),
                baseline: b.design.clone(),
                sweep_axis: r.sweep_axis.clone(),
                sweep_value: r.sweep_value,
                throughput_ratio: tp,
                cycles_ratio: ratio(r.cycles, b.cycles).unwrap_or(0.0),
                pmem_ratio: ratio(r.pmem_bytes_total, b.pmem_bytes_total),
                p99_ratio: ratio(r.latency.p99, b.latency.p99),
            })
        })
        .collect()
}

pub fn emit_comparisons(rows: &[Comparison], format: Format) -> Result<String, StatsError> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows).map_err(|e| StatsError::Parse(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| StatsError::Parse(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is utf-8"))
        }
    }
}

pub fn geometric_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|&x| x <= 0.0) {
        return None;
    }
    Some((xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(design: &str, cycles: u64, pmem: u64) -> SimStats {
        let mut s = SimStats {
            workload: "bptree".into(),
            design: design.into(),
            seed: 1,
            ops: 10,
            clock_ghz: 2.0,
            cycles,
            logical_writes: 30,
            pmem_bytes: PmemBytes { home: pmem, ..Default::default() },
            txlen: TxLenStats { min: 1, max: 9, mean: 10.0 / 3.0 },
            ..Default::default()
        };
        s.finish();
        s
    }

    #[test]
    fn empty_run_document_is_schema_complete() {
        let s = SimStats::default();
        let j = emit(std::slice::from_ref(&s), Format::Json).unwrap();
        assert!(j.contains("\"schema_version\": 1"));
        assert!(j.contains("\"premature_flushes\": 0"));
        assert_eq!(parse(&j, Format::Json).unwrap(), vec![s.clone()]);
        let c = emit(&[s], Format::Csv).unwrap();
        assert_eq!(c.lines().count(), 2);
        assert!(c.starts_with("schema_version,workload,design,"));
    }

    #[test]
    fn csv_has_one_row_per_sweep_point() {
        let runs: Vec<SimStats> = (0..4)
            .map(|i| {
                let mut r = run("HERCULES", 1000 + i, 64);
                r.sweep_axis = "wpq_entries".into();
                r.sweep_value = i as f64;
                r
            })
            .collect();
        let c = emit(&runs, Format::Csv).unwrap();
        assert_eq!(c.lines().count(), 5);
        assert_eq!(parse(&c, Format::Csv).unwrap(), runs);
    }

    #[test]
    fn identity_comparison_is_one() {
        let r = run("OPT", 500, 128);
        let c = compare_designs(&[r], "OPT").unwrap();
        assert_eq!(c[0].throughput_ratio, 1.0);
        assert_eq!(c[0].pmem_ratio, Some(1.0));
    }

    #[test]
    fn comparison_normalizes_to_baseline() {
        let runs = [run("OPT", 1000, 0), run("HERCULES", 1100, 300), run("SWL_EADR", 2000, 1000)];
        let c = compare_designs(&runs, "SWL_EADR").unwrap();
        let h = c.iter().find(|c| c.design == "HERCULES").unwrap();
        assert!((h.pmem_ratio.unwrap() - 0.3).abs() < 1e-12);
        assert!(h.throughput_ratio > 1.0);
        assert!(matches!(compare_designs(&runs[..2], "SWL_EADR"), Err(StatsError::MismatchedRuns(_))));
    }

    #[test]
    fn old_schema_is_rejected() {
        let j = emit(&[run("OPT", 1, 1)], Format::Json).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 0");
        assert!(parse(&j, Format::Json).is_err());
    }

    #[test]
    fn geometric_mean_of_powers() {
        assert!((geometric_mean(&[0.25, 1.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), None);
    }
}
