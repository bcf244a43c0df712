//! Binary pmem dump: the persistent state left behind by a power-off.
//!
//! Little-endian throughout; the byte layout is specified in
//! `docs/format.md`. Encoding is canonical (sections sorted, zero home lines
//! omitted), so two devices with equal persistent contents encode to equal
//! bytes regardless of write counters or insertion order.

use std::path::Path;

use serde::Serialize;

use crate::addr::{Address, LineBytes, LINE_BYTES};
use crate::cache::{TxState, TX_ID_LIMIT};
use crate::error::{SimError, SimResult};
use crate::pmem::{EmergencyRecord, LogEntry, LogZoneLayout, McSave, PmemDevice};

pub const MAGIC: [u8; 8] = *b"HRCLDUMP";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 128;

const SECTIONS: [[u8; 4]; 6] = [*b"MCSV", *b"PROF", *b"LOGE", *b"EXTN", *b"EMRG", *b"HOME"];
const TRAILER: [u8; 4] = *b"DEND";
const STATE_BIT: u64 = 1 << 63;

fn layout_words(l: &LogZoneLayout) -> [u64; 13] {
    [
        l.base,
        l.flag_addr,
        l.mc_save_base,
        l.mc_save_capacity,
        l.profile_base,
        l.profile_count,
        l.extension_base,
        l.extension_capacity,
        l.emergency_base,
        l.emergency_capacity,
        l.log_base,
        l.log_capacity,
        l.end,
    ]
}

fn layout_from(w: [u64; 13]) -> LogZoneLayout {
    LogZoneLayout {
        base: w[0],
        flag_addr: w[1],
        mc_save_base: w[2],
        mc_save_capacity: w[3],
        profile_base: w[4],
        profile_count: w[5],
        extension_base: w[6],
        extension_capacity: w[7],
        emergency_base: w[8],
        emergency_capacity: w[9],
        log_base: w[10],
        log_capacity: w[11],
        end: w[12],
    }
}

fn meta_word(tx_id: u32, state: TxState) -> u64 {
    tx_id as u64 | (state.bit() as u64) << 63
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn section(&mut self, tag: [u8; 4], count: usize) {
        self.0.extend_from_slice(&tag);
        self.u32(0);
        self.u64(count as u64);
    }
}

pub fn encode(pmem: &PmemDevice) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(4096));
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&[pmem.shutdown_flag(), 0, 0, 0]);
    w.u64(pmem.write_ns());
    for v in layout_words(pmem.layout()) {
        w.u64(v);
    }
    debug_assert_eq!(w.0.len(), HEADER_BYTES);

    let mc = pmem.mc_save();
    w.section(SECTIONS[0], mc.entries.len());
    w.u64(mc.log_head);
    w.u64(mc.log_tail);
    for (&slot, &enc) in &mc.entries {
        w.u32(slot);
        w.u32(0);
        w.u64(enc);
    }

    let profiles = pmem.committed_profiles();
    w.section(SECTIONS[1], profiles.len());
    for (tx, len) in profiles {
        w.u32(tx);
        w.u32(len);
    }

    let mut log: Vec<(u32, &LogEntry)> = pmem.log_slots().collect();
    log.sort_unstable_by_key(|e| e.0);
    w.section(SECTIONS[2], log.len());
    for (slot, e) in log {
        w.u32(slot);
        w.u32(0);
        w.0.extend_from_slice(&e.data);
        w.u64(e.home.0);
        w.u64(meta_word(e.tx_id, e.tx_state));
    }

    let ext: Vec<(usize, u64)> = pmem.extension().iter().enumerate().filter_map(|(i, e)| e.map(|e| (i, e))).collect();
    w.section(SECTIONS[3], ext.len());
    for (slot, enc) in ext {
        w.u32(slot as u32);
        w.u32(0);
        w.u64(enc);
    }

    let em = pmem.emergency();
    w.section(SECTIONS[4], em.len());
    for r in em {
        w.0.extend_from_slice(&r.data);
        w.u64(r.home.0);
        w.u64(meta_word(r.tx_id, r.tx_state));
    }

    let mut home: Vec<(Address, &LineBytes)> = pmem.home_lines().filter(|(_, d)| d.iter().any(|&b| b != 0)).collect();
    home.sort_unstable_by_key(|h| h.0);
    w.section(SECTIONS[5], home.len());
    for (a, d) in home {
        w.u64(a.0);
        w.0.extend_from_slice(d);
    }

    let total = w.0.len() as u64 + 12;
    w.0.extend_from_slice(&TRAILER);
    w.u64(total);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> SimError {
    SimError::CorruptDump(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> SimResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> SimResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> SimResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn line(&mut self) -> SimResult<LineBytes> {
        Ok(self.take(LINE_BYTES as usize)?.try_into().expect("64 bytes"))
    }

    fn reserved32(&mut self) -> SimResult<()> {
        match self.u32()? {
            0 => Ok(()),
            v => Err(corrupt(format!("nonzero reserved word {v:#x} at byte {}", self.pos - 4))),
        }
    }

    /// Reads a section header and returns its record count, bounded by
    /// what the remaining bytes could possibly hold.
    fn section(&mut self, tag: [u8; 4], record: usize) -> SimResult<usize> {
        let got = self.take(4)?;
        if got != tag {
            return Err(corrupt(format!(
                "expected section {} at byte {}, found {:?}",
                String::from_utf8_lossy(&tag),
                self.pos - 4,
                String::from_utf8_lossy(got)
            )));
        }
        self.reserved32()?;
        let n = self.u64()?;
        if n > ((self.buf.len() - self.pos) / record) as u64 {
            return Err(corrupt(format!("section {} claims {n} records", String::from_utf8_lossy(&tag))));
        }
        Ok(n as usize)
    }
}

fn tx_meta(v: u64) -> SimResult<(u32, TxState)> {
    let tx = v & !STATE_BIT;
    if tx >= TX_ID_LIMIT {
        return Err(corrupt(format!("metadata word {v:#018x} carries an out-of-range tx id")));
    }
    Ok((tx as u32, TxState::from_bit((v >> 63) as u8)))
}

fn home_addr(a: u64) -> SimResult<Address> {
    let a = Address(a);
    if !a.is_home() || !a.is_line_aligned() {
        return Err(corrupt(format!("{a} is not a line-aligned home address")));
    }
    Ok(a)
}

fn ascending<T: PartialOrd + Copy>(prev: &mut Option<T>, v: T, what: &str) -> SimResult<()> {
    if prev.is_some_and(|p| p >= v) {
        return Err(corrupt(format!("{what} not strictly ascending")));
    }
    *prev = Some(v);
    Ok(())
}

pub fn decode(bytes: &[u8]) -> SimResult<PmemDevice> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hdr = r.take(4)?;
    let flag = hdr[0];
    if flag > 1 || hdr[1..] != [0, 0, 0] {
        return Err(corrupt(format!("bad flag bytes {hdr:?}")));
    }
    let write_ns = r.u64()?;
    let mut words = [0u64; 13];
    for w in &mut words {
        *w = r.u64()?;
    }
    let layout = layout_from(words);
    if !layout.is_disjoint() || layout.profile_count > TX_ID_LIMIT {
        return Err(corrupt("inconsistent log-zone layout"));
    }

    let n = r.section(SECTIONS[0], 16)?;
    let mut mc = McSave { log_head: r.u64()?, log_tail: r.u64()?, ..McSave::default() };
    if mc.log_tail > mc.log_head {
        return Err(corrupt("saved LogTail is ahead of LogHead"));
    }
    let mut prev = None;
    for _ in 0..n {
        let slot = r.u32()?;
        r.reserved32()?;
        ascending(&mut prev, slot, "eWPQ snapshot")?;
        if slot as u64 >= layout.mc_save_capacity {
            return Err(corrupt(format!("eWPQ slot {slot} beyond capacity")));
        }
        mc.entries.insert(slot, r.u64()?);
    }

    let n = r.section(SECTIONS[1], 8)?;
    let mut profiles = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let (tx, len) = (r.u32()?, r.u32()?);
        ascending(&mut prev, tx, "profiles")?;
        if tx as u64 >= layout.profile_count || len == 0 {
            return Err(corrupt(format!("bad profile ({tx}, {len})")));
        }
        profiles.push((tx, len));
    }

    let n = r.section(SECTIONS[2], 88)?;
    let mut log = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let slot = r.u32()?;
        r.reserved32()?;
        ascending(&mut prev, slot, "log entries")?;
        if slot as u64 >= layout.log_capacity {
            return Err(corrupt(format!("log slot {slot} beyond capacity")));
        }
        let data = r.line()?;
        let home = home_addr(r.u64()?)?;
        let (tx_id, tx_state) = tx_meta(r.u64()?)?;
        log.push((slot, LogEntry { data, home, tx_id, tx_state }));
    }

    let n = r.section(SECTIONS[3], 16)?;
    let mut ext = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let slot = r.u32()?;
        r.reserved32()?;
        ascending(&mut prev, slot, "extension entries")?;
        if slot as u64 >= layout.extension_capacity {
            return Err(corrupt(format!("extension slot {slot} beyond capacity")));
        }
        ext.push((slot, r.u64()?));
    }

    let n = r.section(SECTIONS[4], 80)?;
    if n as u64 > layout.emergency_capacity {
        return Err(corrupt(format!("{n} emergency records exceed the area")));
    }
    let mut emergency = Vec::with_capacity(n);
    for _ in 0..n {
        let data = r.line()?;
        let home = home_addr(r.u64()?)?;
        let (tx_id, tx_state) = tx_meta(r.u64()?)?;
        emergency.push(EmergencyRecord { data, home, tx_id, tx_state });
    }

    let n = r.section(SECTIONS[5], 72)?;
    let mut home = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let a = home_addr(r.u64()?)?;
        ascending(&mut prev, a.0, "home lines")?;
        home.push((a.0, r.line()?));
    }

    if r.take(4)? != TRAILER {
        return Err(corrupt("missing trailer"));
    }
    let total = r.u64()?;
    if total != bytes.len() as u64 || r.pos != bytes.len() {
        return Err(corrupt(format!("length field {total} but {} bytes", bytes.len())));
    }

    let mut dev = PmemDevice::with_layout(layout, write_ns);
    dev.restore_parts(flag, mc, profiles, log, ext, emergency, home);
    Ok(dev)
}

pub fn write_dump(path: &Path, pmem: &PmemDevice) -> std::io::Result<()> {
    std::fs::write(path, encode(pmem))
}

pub fn read_dump(path: &Path) -> SimResult<PmemDevice> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Human-oriented digest of a dump, as printed by `dump-inspect`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DumpSummary {
    pub version: u32,
    pub bytes: u64,
    pub clean_shutdown: bool,
    pub log_head: u64,
    pub log_tail: u64,
    pub ewpq_entries: u64,
    /// Transactions whose TxLen is nonzero.
    pub committed_profiles: u64,
    pub log_entries: u64,
    pub uncommitted_log_entries: u64,
    pub extension_entries: u64,
    pub emergency_records: u64,
    pub emergency_tx_ids: Vec<u32>,
    pub home_lines: u64,
    pub layout: LogZoneLayout,
}

pub fn summarize(bytes: &[u8]) -> SimResult<DumpSummary> {
    let d = decode(bytes)?;
    let mut em_tx: Vec<u32> = d.emergency().iter().map(|r| r.tx_id).collect();
    em_tx.sort_unstable();
    em_tx.dedup();
    Ok(DumpSummary {
        version: VERSION,
        bytes: bytes.len() as u64,
        clean_shutdown: d.shutdown_flag() == 1,
        log_head: d.mc_save().log_head,
        log_tail: d.mc_save().log_tail,
        ewpq_entries: d.mc_save().entries.len() as u64,
        committed_profiles: d.committed_profiles().len() as u64,
        log_entries: d.log_slots().count() as u64,
        uncommitted_log_entries: d.log_slots().filter(|(_, e)| e.tx_state == TxState::Uncommitted).count() as u64,
        extension_entries: d.extension().iter().filter(|e| e.is_some()).count() as u64,
        emergency_records: d.emergency().len() as u64,
        emergency_tx_ids: em_tx,
        home_lines: d.home_lines().filter(|(_, l)| l.iter().any(|&b| b != 0)).count() as u64,
        layout: d.layout().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    fn sample() -> PmemDevice {
        let mut d = PmemDevice::new(&SimConfig::stress()).unwrap();
        d.write_home(Address(0x1000), &[7; 64]);
        d.write_home(Address(0x40), &[0; 64]);
        d.set_txlen(5, 3).unwrap();
        d.write_log_entry(2, LogEntry { data: [9; 64], home: Address(0x2000), tx_id: 5, tx_state: TxState::Uncommitted });
        d.write_extension(1, Some(0xdead));
        d.append_emergency(EmergencyRecord { data: [1; 64], home: Address(0x80), tx_id: 6, tx_state: TxState::Uncommitted });
        d.save_registers(10, 4);
        d.save_ewpq_entry(3, 0xbeef);
        d
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let d = sample();
        let a = encode(&d);
        assert_eq!(&a[..8], b"HRCLDUMP");
        let back = decode(&a).unwrap();
        assert_eq!(encode(&back), a);
        assert_eq!(back.profile(5), 3);
        assert_eq!(back.peek_home(Address(0x1000)), [7; 64]);
        assert_eq!(back.emergency().len(), 1);
        assert_eq!(back.mc_save().log_head, 10);
    }

    #[test]
    fn sizes_follow_the_documented_packing() {
        let a = encode(&sample());
        // header + six section headers + records + trailer
        let want = HEADER_BYTES + 6 * 16 + 16 + 16 + 8 + 88 + 16 + 80 + 72 + 12;
        assert_eq!(a.len(), want);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let a = encode(&sample());
        for n in 0..a.len() {
            assert!(matches!(decode(&a[..n]), Err(SimError::CorruptDump(_))), "prefix {n}");
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut a = encode(&sample());
        a[0] = b'X';
        assert!(decode(&a).is_err());
        let mut b = encode(&sample());
        b[8] = 9;
        assert!(decode(&b).is_err());
    }

    #[test]
    fn summary_counts_areas() {
        let s = summarize(&encode(&sample())).unwrap();
        assert!(!s.clean_shutdown);
        assert_eq!(s.log_entries, 1);
        assert_eq!(s.uncommitted_log_entries, 1);
        assert_eq!(s.emergency_tx_ids, vec![6]);
        assert_eq!(s.home_lines, 1);
    }
}
