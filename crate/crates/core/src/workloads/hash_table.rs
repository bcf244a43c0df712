//! Chained hash table; also backs `kv_mixed`.
//!
//! Header `[count]` at `base`, bucket heads from `base + 64`; node (32B)
//! `[key, value, next, _]`.

use super::{Arena, Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

const NODE: u64 = 32;
const KEY: u64 = 0;
const VALUE: u64 = 8;
const NEXT: u64 = 16;

#[derive(Clone, Debug)]
pub struct HashTable {
    count: u64,
    buckets: u64,
    mask: u64,
    arena: Arena,
}

impl HashTable {
    pub fn new(base: u64, buckets: u64, mut arena: Arena) -> Self {
        debug_assert!(buckets.is_power_of_two());
        let table = arena.alloc(buckets * 8);
        HashTable { count: base, buckets: table, mask: buckets - 1, arena }
    }

    fn bucket(&self, key: u64) -> u64 {
        self.buckets + (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32 & self.mask) * 8
    }

    /// Returns (link address pointing at the node, node) for `key`.
    fn find(&self, m: &mut dyn Mem, key: u64) -> SimResult<(u64, u64)> {
        m.compute(4)?;
        let mut link = self.bucket(key);
        let mut n = m.load(link)?;
        while n != 0 {
            m.compute(1)?;
            if m.load(n + KEY)? == key {
                break;
            }
            link = n + NEXT;
            n = m.load(link)?;
        }
        Ok((link, n))
    }

    fn insert(&mut self, m: &mut dyn Mem, key: u64, value: u64) -> SimResult<()> {
        let (_, n) = self.find(m, key)?;
        if n != 0 {
            return m.store(n + VALUE, value);
        }
        let b = self.bucket(key);
        let head = m.load(b)?;
        let n = self.arena.alloc(NODE);
        m.store(n + KEY, key)?;
        m.store(n + VALUE, value)?;
        m.store(n + NEXT, head)?;
        m.store(b, n)?;
        let c = m.load(self.count)?;
        m.store(self.count, c + 1)
    }

    fn delete(&mut self, m: &mut dyn Mem, key: u64) -> SimResult<()> {
        let (link, n) = self.find(m, key)?;
        if n == 0 {
            return Err(SimError::SimFault(format!("delete of missing key {key}")));
        }
        let next = m.load(n + NEXT)?;
        m.store(link, next)?;
        let c = m.load(self.count)?;
        m.store(self.count, c - 1)?;
        self.arena.free(n, NODE);
        Ok(())
    }
}

impl Structure for HashTable {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::Insert { key, value } => self.insert(m, key, value),
            Op::Delete { key } => self.delete(m, key),
            Op::Get { key } => {
                let (_, n) = self.find(m, key)?;
                if n != 0 {
                    m.load(n + VALUE)?;
                }
                Ok(())
            }
            other => Err(SimError::Invalid(format!("hash_table cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let mut out = Vec::new();
        for b in 0..=self.mask {
            let mut n = peek(self.buckets + b * 8);
            while n != 0 {
                let k = peek(n + KEY);
                if self.bucket(k) != self.buckets + b * 8 {
                    return Err(format!("key {k} chained in the wrong bucket"));
                }
                out.push((k, peek(n + VALUE)));
                n = peek(n + NEXT);
            }
        }
        if out.len() as u64 != peek(self.count) {
            return Err(format!("count {} but {} nodes", peek(self.count), out.len()));
        }
        out.sort_unstable();
        if out.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err("duplicate key".into());
        }
        Ok(out)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
