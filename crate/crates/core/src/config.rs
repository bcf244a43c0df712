//! Simulator configuration: defaults, TOML loading, `key=value` overrides and
//! validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::LINE_BYTES;

#[derive(Debug, Error, PartialEq, Clone)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation { field: field.into(), reason: reason.into() }
    }

    /// Name of the offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            ConfigError::Parse(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateResetMode {
    /// One fixed charge per commit regardless of transaction size.
    #[default]
    Uniform,
    /// The configured cycles are charged once per toggled TransTag.
    PerLine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLevelConfig {
    pub name: String,
    pub capacity_bytes: u64,
    pub ways: u64,
    #[serde(default = "default_line_bytes")]
    pub line_bytes: u64,
    pub access_cycles: u64,
    pub transtag_ratio: f64,
    #[serde(default = "default_penalty")]
    pub transtag_access_penalty: f64,
}

fn default_line_bytes() -> u64 {
    LINE_BYTES
}

fn default_penalty() -> f64 {
    0.30
}

impl CacheLevelConfig {
    pub fn new(name: &str, capacity_bytes: u64, ways: u64, access_cycles: u64, transtag_ratio: f64) -> Self {
        CacheLevelConfig {
            name: name.to_string(),
            capacity_bytes,
            ways,
            line_bytes: LINE_BYTES,
            access_cycles,
            transtag_ratio,
            transtag_access_penalty: default_penalty(),
        }
    }

    pub fn lines(&self) -> u64 {
        self.capacity_bytes / self.line_bytes
    }

    pub fn sets(&self) -> u64 {
        self.lines() / self.ways
    }

    /// TransTags per set: `round(ratio * ways)`.
    pub fn tags_per_set(&self) -> u64 {
        (self.transtag_ratio * self.ways as f64).round().max(0.0) as u64
    }

    /// Extra cycles (in thousandths) charged per access that consults a TransTag.
    pub fn penalty_permille(&self) -> u64 {
        (self.transtag_access_penalty * 1000.0).round() as u64
    }

    fn validate(&self, idx: usize) -> Result<(), ConfigError> {
        let f = |k: &str| format!("cache_levels[{idx}].{k}");
        if self.line_bytes != LINE_BYTES {
            return Err(ConfigError::invalid(f("line_bytes"), "line size is fixed at 64 bytes"));
        }
        if self.capacity_bytes == 0 {
            return Err(ConfigError::invalid(f("capacity_bytes"), "must be > 0"));
        }
        if self.ways == 0 || self.ways > 64 {
            return Err(ConfigError::invalid(f("ways"), "must be in 1..=64"));
        }
        if self.access_cycles == 0 {
            return Err(ConfigError::invalid(f("access_cycles"), "must be > 0"));
        }
        if !self.capacity_bytes.is_multiple_of(self.ways * self.line_bytes) {
            return Err(ConfigError::invalid(f("capacity_bytes"), "must be divisible by ways x line_bytes"));
        }
        if !(0.0..=1.0).contains(&self.transtag_ratio) {
            return Err(ConfigError::invalid(f("transtag_ratio"), "must lie in [0, 1]"));
        }
        if !(self.transtag_access_penalty >= 0.0) {
            return Err(ConfigError::invalid(f("transtag_access_penalty"), "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub core_count: u64,
    pub clock_ghz: f64,
    /// Exactly three levels: private L1D, private L2, shared LLC.
    pub cache_levels: Vec<CacheLevelConfig>,
    pub pmem_read_ns: u64,
    pub pmem_write_ns: u64,
    pub wpq_entries: u64,
    pub ewpq_entries: u64,
    /// Models an eWPQ that never fills (no spills to the extension area).
    pub ewpq_unbounded: bool,
    /// Extension area capacity as a multiple of `ewpq_entries`.
    pub ewpq_extension_factor: u64,
    pub state_reset_cycles: u64,
    pub state_reset_mode: StateResetMode,
    pub ewpq_search_cycles: u64,
    pub migration_scan_period_instructions: u64,
    pub gc_threshold: u64,
    pub gc_chunk: u64,
    pub log_zone_bytes: u64,
    pub isolation_abort_on_conflict: bool,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            core_count: 8,
            clock_ghz: 3.0,
            cache_levels: vec![
                CacheLevelConfig::new("L1D", 32 * 1024, 4, 2, 1.0),
                CacheLevelConfig::new("L2", 256 * 1024, 8, 8, 0.5),
                CacheLevelConfig::new("LLC", 16 * 1024 * 1024, 16, 30, 0.25),
            ],
            pmem_read_ns: 150,
            pmem_write_ns: 100,
            wpq_entries: 64,
            ewpq_entries: 512,
            ewpq_unbounded: false,
            ewpq_extension_factor: 10,
            state_reset_cycles: 10,
            state_reset_mode: StateResetMode::Uniform,
            ewpq_search_cycles: 10,
            migration_scan_period_instructions: 3_000_000,
            gc_threshold: 1 << 20,
            gc_chunk: 32,
            log_zone_bytes: 256 * 1024 * 1024,
            isolation_abort_on_conflict: false,
            rng_seed: 0,
        }
    }
}

/// On-media size of one eWPQ entry.
pub const EWPQ_ENTRY_BYTES: u64 = 8;

impl SimConfig {
    /// Caches scaled down 8x (3840B / 32KB / 2MB), as used for huge-transaction tests.
    pub fn shrunk_8x() -> Self {
        SimConfig {
            cache_levels: vec![
                CacheLevelConfig::new("L1D", 3840, 4, 2, 1.0),
                CacheLevelConfig::new("L2", 32 * 1024, 8, 8, 0.5),
                CacheLevelConfig::new("LLC", 2 * 1024 * 1024, 16, 30, 0.25),
            ],
            ..SimConfig::default()
        }
    }

    /// A deliberately tiny machine that forces premature flushes, eWPQ
    /// spills, GC and migration scans within a few thousand operations.
    pub fn stress() -> Self {
        SimConfig {
            core_count: 2,
            cache_levels: vec![
                CacheLevelConfig::new("L1D", 512, 4, 2, 1.0),
                CacheLevelConfig::new("L2", 2048, 4, 8, 0.5),
                CacheLevelConfig::new("LLC", 8192, 8, 30, 0.25),
            ],
            ewpq_entries: 8,
            gc_threshold: 64,
            gc_chunk: 8,
            migration_scan_period_instructions: 2_000,
            log_zone_bytes: 16 * 1024 * 1024,
            ..SimConfig::default()
        }
    }

    pub fn l1(&self) -> &CacheLevelConfig {
        &self.cache_levels[0]
    }

    pub fn l2(&self) -> &CacheLevelConfig {
        &self.cache_levels[1]
    }

    pub fn llc(&self) -> &CacheLevelConfig {
        &self.cache_levels[2]
    }

    pub fn pmem_read_cycles(&self) -> u64 {
        crate::clock::ns_to_cycles(self.pmem_read_ns, self.clock_ghz)
    }

    pub fn pmem_write_cycles(&self) -> u64 {
        crate::clock::ns_to_cycles(self.pmem_write_ns, self.clock_ghz)
    }

    /// eWPQ capacity, `None` when unbounded.
    pub fn ewpq_capacity(&self) -> Option<u64> {
        (!self.ewpq_unbounded).then_some(self.ewpq_entries)
    }

    pub fn extension_capacity(&self) -> u64 {
        if self.ewpq_unbounded {
            0
        } else {
            self.ewpq_entries * self.ewpq_extension_factor
        }
    }

    /// Largest number of lines that can hold an uncommitted TransTag at once.
    pub fn max_transactional_lines(&self) -> u64 {
        let per_level = |l: &CacheLevelConfig| l.sets() * l.tags_per_set();
        self.core_count * (per_level(self.l1()) + per_level(self.l2())) + per_level(self.llc())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("core_count", self.core_count),
            ("pmem_read_ns", self.pmem_read_ns),
            ("pmem_write_ns", self.pmem_write_ns),
            ("wpq_entries", self.wpq_entries),
            ("ewpq_entries", self.ewpq_entries),
            ("ewpq_extension_factor", self.ewpq_extension_factor),
            ("migration_scan_period_instructions", self.migration_scan_period_instructions),
            ("gc_threshold", self.gc_threshold),
            ("gc_chunk", self.gc_chunk),
            ("log_zone_bytes", self.log_zone_bytes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::invalid(name, "must be > 0"));
            }
        }
        if self.core_count > 64 {
            return Err(ConfigError::invalid("core_count", "at most 64 cores are supported"));
        }
        if !(self.clock_ghz > 0.0) {
            return Err(ConfigError::invalid("clock_ghz", "must be > 0"));
        }
        if self.cache_levels.len() != 3 {
            return Err(ConfigError::invalid("cache_levels", "expected exactly three levels (L1D, L2, LLC)"));
        }
        for (i, l) in self.cache_levels.iter().enumerate() {
            l.validate(i)?;
        }
        for w in self.cache_levels.windows(2) {
            if w[1].capacity_bytes < w[0].capacity_bytes {
                return Err(ConfigError::invalid("cache_levels", "capacities must be non-decreasing from L1D to LLC"));
            }
        }
        if self.l1().tags_per_set() == 0 {
            return Err(ConfigError::invalid("cache_levels[0].transtag_ratio", "L1D needs at least one TransTag per set"));
        }
        Ok(())
    }
}

/// Parses a TOML document into a validated config. Missing keys take defaults;
/// unknown keys are rejected.
pub fn load_config(source: &str) -> Result<SimConfig, ConfigError> {
    load_config_with_overrides(source, &[] as &[&str])
}

/// Like [`load_config`], then applies `key=value` overrides. Keys are dotted
/// paths; numeric segments index arrays (`cache_levels.2.transtag_ratio=1.0`).
pub fn load_config_with_overrides<S: AsRef<str>>(source: &str, overrides: &[S]) -> Result<SimConfig, ConfigError> {
    load_config_over(&SimConfig::default(), source, overrides)
}

/// Like [`load_config_with_overrides`], with missing keys taken from `base`.
pub fn load_config_over<S: AsRef<str>>(base: &SimConfig, source: &str, overrides: &[S]) -> Result<SimConfig, ConfigError> {
    let doc: toml::Table = toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut merged = match toml::Value::try_from(base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("a config serializes to a table"),
    };
    for (k, v) in doc {
        merged.insert(k, v);
    }
    let mut root = toml::Value::Table(merged);
    for o in overrides {
        apply_override(&mut root, o.as_ref())?;
    }
    let cfg: SimConfig = root.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scalar(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), parse_scalar(raw.trim()));
                    return Ok(());
                }
                t.get_mut(*seg).ok_or_else(|| ConfigError::invalid(key, "unknown key"))?
            }
            toml::Value::Array(a) => {
                let idx: usize = seg.parse().map_err(|_| ConfigError::invalid(key, "expected array index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| ConfigError::invalid(key, format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = parse_scalar(raw.trim());
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::invalid(key, "path descends into a scalar")),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_table_defaults() {
        let c = load_config("").unwrap();
        assert_eq!(c.core_count, 8);
        assert_eq!(c.clock_ghz, 3.0);
        assert_eq!(c.l1().capacity_bytes, 32 * 1024);
        assert_eq!(c.l1().ways, 4);
        assert_eq!(c.l1().access_cycles, 2);
        assert_eq!(c.l2().capacity_bytes, 256 * 1024);
        assert_eq!(c.l2().access_cycles, 8);
        assert_eq!(c.llc().capacity_bytes, 16 * 1024 * 1024);
        assert_eq!(c.llc().ways, 16);
        assert_eq!(c.llc().access_cycles, 30);
        assert_eq!((c.pmem_read_ns, c.pmem_write_ns), (150, 100));
        assert_eq!(c.wpq_entries, 64);
        assert_eq!(c.ewpq_entries, 512);
        assert_eq!(c.state_reset_cycles, 10);
        assert_eq!(c.ewpq_search_cycles, 10);
        assert_eq!(c.migration_scan_period_instructions, 3_000_000);
        assert_eq!(c.gc_chunk, 32);
        assert_eq!(c.log_zone_bytes, 256 << 20);
        assert_eq!(c, SimConfig::default());
    }

    #[test]
    fn default_ewpq_is_four_kilobytes() {
        let c = SimConfig::default();
        assert_eq!(c.ewpq_entries * EWPQ_ENTRY_BYTES, 4096);
    }

    #[test]
    fn default_transtag_ratios() {
        let c = SimConfig::default();
        assert_eq!(c.l1().tags_per_set(), 4);
        assert_eq!(c.l2().tags_per_set(), 4);
        assert_eq!(c.llc().tags_per_set(), 4);
    }

    #[test]
    fn zero_ewpq_entries_rejected() {
        let e = load_config("ewpq_entries = 0").unwrap_err();
        assert_eq!(e.field(), Some("ewpq_entries"));
    }

    #[test]
    fn gc_threshold_two_to_twenty() {
        let c = load_config("gc_threshold = 1048576").unwrap();
        assert_eq!(c.gc_threshold, 1 << 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(load_config("bogus = 1"), Err(ConfigError::Parse(_))));
        let nested = "[[cache_levels]]\nname='L1D'\ncapacity_bytes=1024\nways=4\naccess_cycles=2\ntranstag_ratio=1.0\nextra=1";
        assert!(load_config(nested).is_err());
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_config("core_count = "), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_apply_to_nested_levels() {
        let c = load_config_with_overrides("", &["cache_levels.2.transtag_ratio=1.0", "pmem_write_ns=500"]).unwrap();
        assert_eq!(c.llc().transtag_ratio, 1.0);
        assert_eq!(c.pmem_write_ns, 500);
        let e = load_config_with_overrides("", &["cache_levels.7.ways=2"]).unwrap_err();
        assert!(e.field().unwrap().starts_with("cache_levels.7"));
    }

    #[test]
    fn capacity_must_divide() {
        let e = load_config_with_overrides("", &["cache_levels.0.capacity_bytes=1000"]).unwrap_err();
        assert_eq!(e.field(), Some("cache_levels[0].capacity_bytes"));
    }

    #[test]
    fn capacities_non_decreasing() {
        let e = load_config_with_overrides("", &["cache_levels.1.capacity_bytes=16384"]).unwrap_err();
        assert_eq!(e.field(), Some("cache_levels"));
    }

    #[test]
    fn presets_validate() {
        SimConfig::shrunk_8x().validate().unwrap();
        SimConfig::stress().validate().unwrap();
        assert_eq!(SimConfig::shrunk_8x().l1().sets(), 15);
        assert_eq!(SimConfig::shrunk_8x().llc().lines(), 32_768);
    }
}
