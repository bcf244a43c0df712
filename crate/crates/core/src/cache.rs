//! One set-associative cache level with TransTags.
//!
//! A level only knows about its own sets. Movement between levels, write-back
//! and premature flush are orchestrated by [`crate::machine::Machine`].

use serde::{Deserialize, Serialize};

use crate::addr::{recombine, split_with_sets, Address, AddressFields, LineBytes, LINE_BYTES};
use crate::config::CacheLevelConfig;

/// Width of a transaction id.
pub const TX_ID_BITS: u32 = 21;
pub const TX_ID_LIMIT: u64 = 1 << TX_ID_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum TxState {
    /// `0`: committed, the line behaves as an ordinary dirty line.
    #[default]
    Committed,
    /// `1`: owned by a live transaction.
    Uncommitted,
}

impl TxState {
    pub fn bit(self) -> u8 {
        match self {
            TxState::Committed => 0,
            TxState::Uncommitted => 1,
        }
    }

    pub fn from_bit(b: u8) -> Self {
        if b & 1 == 1 {
            TxState::Uncommitted
        } else {
            TxState::Committed
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransTag {
    pub way_no: u8,
    pub tx_id: u32,
    pub tx_state: TxState,
    pub in_use: bool,
}

impl TransTag {
    /// A tag that may be (re)assigned: unused, or left over from a committed tx.
    fn is_free(&self) -> bool {
        !self.in_use || self.tx_state == TxState::Committed
    }

    fn holds_uncommitted(&self) -> bool {
        self.in_use && self.tx_state == TxState::Uncommitted
    }
}

/// Bits of TransTag storage per set: `tags * (tx_id + way_no + tx_state)`.
pub fn transtag_bits_per_set(tags: u64, ways: u64) -> u64 {
    let way_bits = 64 - (ways.max(2) - 1).leading_zeros() as u64;
    tags * (TX_ID_BITS as u64 + way_bits + 1)
}

#[derive(Clone, Debug)]
pub struct CacheLine {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    pub data: LineBytes,
    pub last_use: u64,
}

impl Default for CacheLine {
    fn default() -> Self {
        CacheLine { tag: 0, valid: false, dirty: false, data: [0; LINE_BYTES as usize], last_use: 0 }
    }
}

/// Why a way was picked by [`Cache::select_victim`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VictimKind {
    /// Invalid way; nothing to evict.
    Invalid,
    /// LRU line that is not held by an uncommitted transaction.
    NonTransactional,
    /// LRU transactional line; its TransTag is needed by the incoming line.
    Transactional,
    /// A non-transactional fill found only transactional lines.
    ForcedTransactional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Victim {
    pub way: usize,
    pub kind: VictimKind,
}

/// A line removed from a cache, with its TransTag binding if it had one.
#[derive(Clone, Debug)]
pub struct Evicted {
    pub addr: Address,
    pub dirty: bool,
    pub data: LineBytes,
    /// `Some` when the line was held by an uncommitted transaction.
    pub tx: Option<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounters {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Clone, Debug)]
pub struct Cache {
    cfg: CacheLevelConfig,
    sets: u64,
    ways: usize,
    tags_per_set: usize,
    lines: Vec<CacheLine>,
    transtags: Vec<TransTag>,
    use_counter: u64,
    pub counters: LevelCounters,
}

impl Cache {
    pub fn new(cfg: &CacheLevelConfig) -> Self {
        let sets = cfg.sets();
        let ways = cfg.ways as usize;
        let tags_per_set = cfg.tags_per_set() as usize;
        Cache {
            cfg: cfg.clone(),
            sets,
            ways,
            tags_per_set,
            lines: vec![CacheLine::default(); sets as usize * ways],
            transtags: vec![TransTag::default(); sets as usize * tags_per_set],
            use_counter: 0,
            counters: LevelCounters::default(),
        }
    }

    pub fn config(&self) -> &CacheLevelConfig {
        &self.cfg
    }

    pub fn num_sets(&self) -> u64 {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn tags_per_set(&self) -> usize {
        self.tags_per_set
    }

    pub fn split(&self, addr: Address) -> AddressFields {
        split_with_sets(addr, self.sets)
    }

    pub fn set_of(&self, addr: Address) -> usize {
        (addr.line_number() % self.sets) as usize
    }

    fn idx(&self, set: usize, way: usize) -> usize {
        set * self.ways + way
    }

    fn tag_range(&self, set: usize) -> std::ops::Range<usize> {
        set * self.tags_per_set..(set + 1) * self.tags_per_set
    }

    pub fn line(&self, set: usize, way: usize) -> &CacheLine {
        &self.lines[self.idx(set, way)]
    }

    pub fn line_mut(&mut self, set: usize, way: usize) -> &mut CacheLine {
        let i = self.idx(set, way);
        &mut self.lines[i]
    }

    pub fn addr_of(&self, set: usize, way: usize) -> Address {
        let l = self.line(set, way);
        recombine(AddressFields { tag: l.tag, set_index: set as u64, offset: 0 }, self.sets)
    }

    /// Way holding `addr` in its set, without touching LRU state.
    pub fn find(&self, addr: Address) -> Option<(usize, usize)> {
        let f = self.split(addr);
        let set = f.set_index as usize;
        let base = set * self.ways;
        self.lines[base..base + self.ways]
            .iter()
            .position(|l| l.valid && l.tag == f.tag)
            .map(|w| (set, w))
    }

    pub fn touch(&mut self, set: usize, way: usize) {
        self.use_counter += 1;
        let c = self.use_counter;
        self.line_mut(set, way).last_use = c;
    }

    pub fn transtags(&self, set: usize) -> &[TransTag] {
        &self.transtags[self.tag_range(set)]
    }

    pub fn tag_of_way(&self, set: usize, way: usize) -> Option<&TransTag> {
        self.transtags(set).iter().find(|t| t.in_use && t.way_no as usize == way)
    }

    /// Owning transaction if the way holds an uncommitted line.
    pub fn uncommitted_tx(&self, set: usize, way: usize) -> Option<u32> {
        if self.tags_per_set == 0 {
            return None;
        }
        self.tag_of_way(set, way).filter(|t| t.tx_state == TxState::Uncommitted).map(|t| t.tx_id)
    }

    pub fn free_tag_available(&self, set: usize) -> bool {
        self.transtags(set).iter().any(TransTag::is_free)
    }

    pub fn uncommitted_count(&self, set: usize) -> usize {
        self.transtags(set).iter().filter(|t| t.holds_uncommitted()).count()
    }

    /// Binds a TransTag `{tx, Uncommitted}` to `way`. Returns `false` when
    /// every tag in the set is held by an uncommitted line.
    pub fn claim_tag(&mut self, set: usize, way: usize, tx_id: u32) -> bool {
        let range = self.tag_range(set);
        let tags = &mut self.transtags[range];
        let slot = tags
            .iter()
            .position(|t| t.in_use && t.way_no as usize == way)
            .filter(|&i| tags[i].is_free() || tags[i].tx_id == tx_id)
            .or_else(|| tags.iter().position(|t| !t.in_use))
            .or_else(|| tags.iter().position(TransTag::is_free));
        match slot {
            Some(i) => {
                // A committed tag may still point at another way; that line
                // simply becomes an ordinary dirty line.
                for (j, t) in tags.iter_mut().enumerate() {
                    if j != i && t.in_use && t.way_no as usize == way {
                        t.in_use = false;
                    }
                }
                tags[i] = TransTag { way_no: way as u8, tx_id, tx_state: TxState::Uncommitted, in_use: true };
                true
            }
            None => false,
        }
    }

    pub fn release_tag(&mut self, set: usize, way: usize) {
        let range = self.tag_range(set);
        for t in &mut self.transtags[range] {
            if t.in_use && t.way_no as usize == way {
                t.in_use = false;
            }
        }
    }

    /// Ways in `set` whose tag is `{tx_id, Uncommitted}`.
    pub fn ways_of_tx(&self, set: usize, tx_id: u32) -> impl Iterator<Item = usize> + '_ {
        self.transtags(set)
            .iter()
            .filter(move |t| t.holds_uncommitted() && t.tx_id == tx_id)
            .map(|t| t.way_no as usize)
    }

    /// Sets the tag of `way` to committed. Returns whether it was toggled.
    pub fn commit_way(&mut self, set: usize, way: usize, tx_id: u32) -> bool {
        let range = self.tag_range(set);
        for t in &mut self.transtags[range] {
            if t.holds_uncommitted() && t.tx_id == tx_id && t.way_no as usize == way {
                t.tx_state = TxState::Committed;
                return true;
            }
        }
        false
    }

    /// Picks a way for an incoming line.
    ///
    /// Non-transactional fills only displace non-transactional lines unless
    /// the set holds nothing else. Transactional fills need a free TransTag;
    /// without one the LRU transactional line is the victim.
    pub fn select_victim(&self, set: usize, incoming_tx: bool) -> Victim {
        let base = set * self.ways;
        let lines = &self.lines[base..base + self.ways];
        let needs_tag_eviction = incoming_tx && !self.free_tag_available(set);
        if !needs_tag_eviction {
            if let Some(w) = lines.iter().position(|l| !l.valid) {
                return Victim { way: w, kind: VictimKind::Invalid };
            }
        }
        let tx_ways: u64 = self
            .transtags(set)
            .iter()
            .filter(|t| t.holds_uncommitted())
            .fold(0, |m, t| m | (1u64 << t.way_no));
        let lru = |want_tx: bool| {
            lines
                .iter()
                .enumerate()
                .filter(|(w, l)| l.valid && ((tx_ways >> w) & 1 == 1) == want_tx)
                .min_by_key(|(_, l)| l.last_use)
                .map(|(w, _)| w)
        };
        if needs_tag_eviction {
            let w = lru(true).expect("no free TransTag implies a transactional line");
            return Victim { way: w, kind: VictimKind::Transactional };
        }
        match lru(false) {
            Some(w) => Victim { way: w, kind: VictimKind::NonTransactional },
            None => {
                let w = lru(true).expect("a full set has at least one line");
                Victim { way: w, kind: VictimKind::ForcedTransactional }
            }
        }
    }

    /// LRU way held by an uncommitted line, skipping `except`.
    pub fn lru_transactional(&self, set: usize, except: Option<usize>) -> Option<usize> {
        self.transtags(set)
            .iter()
            .filter(|t| t.holds_uncommitted() && Some(t.way_no as usize) != except)
            .map(|t| t.way_no as usize)
            .min_by_key(|&w| self.line(set, w).last_use)
    }

    /// Invalidates `way` and returns what it held.
    pub fn take(&mut self, set: usize, way: usize) -> Evicted {
        let addr = self.addr_of(set, way);
        let tx = self.uncommitted_tx(set, way);
        self.release_tag(set, way);
        let l = self.line_mut(set, way);
        debug_assert!(l.valid);
        l.valid = false;
        let dirty = std::mem::replace(&mut l.dirty, false);
        Evicted { addr, dirty, data: l.data, tx }
    }

    /// Installs a line in `way` (which must be invalid) and marks it MRU.
    pub fn place(&mut self, set: usize, way: usize, addr: Address, data: LineBytes, dirty: bool, tx: Option<u32>) {
        let tag = self.split(addr).tag;
        debug_assert_eq!(self.set_of(addr), set);
        {
            let l = self.line_mut(set, way);
            debug_assert!(!l.valid);
            l.tag = tag;
            l.valid = true;
            l.dirty = dirty || tx.is_some();
            l.data = data;
        }
        self.release_tag(set, way);
        if let Some(t) = tx {
            let ok = self.claim_tag(set, way, t);
            debug_assert!(ok, "caller must free a TransTag before placing a transactional line");
        }
        self.touch(set, way);
    }

    /// All valid ways, as `(set, way)`.
    pub fn valid_ways(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.valid)
            .map(move |(i, _)| (i / self.ways, i % self.ways))
    }

    pub fn invalidate_all(&mut self) {
        for l in &mut self.lines {
            l.valid = false;
            l.dirty = false;
        }
        for t in &mut self.transtags {
            t.in_use = false;
        }
    }

    /// Checks the per-set TransTag invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for set in 0..self.sets as usize {
            let mut seen = 0u64;
            for t in self.transtags(set).iter().filter(|t| t.in_use) {
                let w = t.way_no as usize;
                if w >= self.ways {
                    return Err(format!("set {set}: tag points past way count"));
                }
                if !self.line(set, w).valid {
                    return Err(format!("set {set}: tag points at invalid way {w}"));
                }
                if seen & (1 << w) != 0 {
                    return Err(format!("set {set}: two tags on way {w}"));
                }
                seen |= 1 << w;
            }
            for w in 0..self.ways {
                let l = self.line(set, w);
                if l.dirty && !l.valid {
                    return Err(format!("set {set} way {w}: dirty but invalid"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(ways: u64, ratio: f64) -> Cache {
        // one set so every address maps to set 0
        Cache::new(&CacheLevelConfig::new("T", ways * 64, ways, 2, ratio))
    }

    fn addr(i: u64) -> Address {
        Address(i * 64)
    }

    fn fill(c: &mut Cache, n: u64, tx: Option<u32>) {
        for i in 0..n {
            let v = c.select_victim(0, tx.is_some());
            assert_eq!(v.kind, VictimKind::Invalid);
            c.place(0, v.way, addr(i), [0; 64], false, tx);
        }
    }

    #[test]
    fn invalid_way_chosen_first() {
        let mut c = level(4, 0.5);
        fill(&mut c, 2, None);
        let v = c.select_victim(0, false);
        assert_eq!(v.kind, VictimKind::Invalid);
    }

    #[test]
    fn transactional_fill_with_free_tag_evicts_lru_plain_line() {
        let mut c = level(4, 0.5);
        fill(&mut c, 1, Some(1));
        fill_from(&mut c, 1, 3, None);
        // one of two tags still free
        assert!(c.free_tag_available(0));
        let v = c.select_victim(0, true);
        assert_eq!(v.kind, VictimKind::NonTransactional);
        assert_eq!(c.addr_of(0, v.way), addr(1));
    }

    fn fill_from(c: &mut Cache, start: u64, n: u64, tx: Option<u32>) {
        for i in start..start + n {
            let v = c.select_victim(0, tx.is_some());
            c.place(0, v.way, addr(i), [0; 64], false, tx);
        }
    }

    #[test]
    fn all_tags_taken_evicts_lru_transactional() {
        let mut c = level(4, 0.5);
        fill(&mut c, 2, Some(1));
        fill_from(&mut c, 2, 2, None);
        let v = c.select_victim(0, true);
        assert_eq!(v.kind, VictimKind::Transactional);
        assert_eq!(c.addr_of(0, v.way), addr(0));
    }

    #[test]
    fn plain_fill_never_displaces_transactional_when_plain_exists() {
        let mut c = level(4, 1.0);
        fill(&mut c, 3, Some(9));
        fill_from(&mut c, 3, 1, None);
        let v = c.select_victim(0, false);
        assert_eq!(v.kind, VictimKind::NonTransactional);
        assert_eq!(c.addr_of(0, v.way), addr(3));
    }

    #[test]
    fn plain_fill_into_all_transactional_set_is_forced() {
        let mut c = level(4, 1.0);
        fill(&mut c, 4, Some(9));
        let v = c.select_victim(0, false);
        assert_eq!(v.kind, VictimKind::ForcedTransactional);
        assert_eq!(c.addr_of(0, v.way), addr(0));
    }

    #[test]
    fn committed_tags_are_reusable() {
        let mut c = level(4, 0.5);
        fill(&mut c, 2, Some(1));
        for w in 0..4 {
            c.commit_way(0, w, 1);
        }
        assert!(c.free_tag_available(0));
        assert_eq!(c.uncommitted_count(0), 0);
        fill_from(&mut c, 2, 2, None);
        let v = c.select_victim(0, true);
        assert_eq!(v.kind, VictimKind::NonTransactional);
    }

    #[test]
    fn take_releases_tag() {
        let mut c = level(2, 1.0);
        fill(&mut c, 1, Some(3));
        let (s, w) = c.find(addr(0)).unwrap();
        let e = c.take(s, w);
        assert_eq!(e.tx, Some(3));
        assert!(e.dirty);
        assert_eq!(c.uncommitted_count(0), 0);
        c.check_invariants().unwrap();
    }

    #[test]
    fn storage_for_four_way_two_tags_is_48_bits() {
        assert_eq!(transtag_bits_per_set(2, 4), 48);
    }

    #[test]
    fn find_uses_address_split() {
        let mut c = Cache::new(&CacheLevelConfig::new("T", 64 * 8, 2, 2, 1.0));
        let a = Address(0x1000);
        let set = c.set_of(a);
        let v = c.select_victim(set, false);
        c.place(set, v.way, a, [7; 64], true, None);
        assert_eq!(c.find(a), Some((set, v.way)));
        assert_eq!(c.addr_of(set, v.way), a);
        assert_eq!(c.find(Address(0x1040)), None);
    }
}
