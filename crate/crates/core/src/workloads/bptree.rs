//! B+-tree with 256-byte nodes (four cache lines), up to 15 keys per node,
//! preemptive splits on the way down and lazy deletion (leaves may empty,
//! nodes are never merged).
//!
//! Node words: `[0]` meta = `count << 1 | is_leaf`, `[1..=15]` keys,
//! `[16..=31]` children (inner) or values `[16..=30]` plus next-leaf `[31]`.
//! Header `[root, count]` at `base`.

use super::{Arena, Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

const NODE: u64 = 256;
const MAX_KEYS: u64 = 15;

fn key_at(n: u64, i: u64) -> u64 {
    n + 8 + i * 8
}

fn slot_at(n: u64, i: u64) -> u64 {
    n + 128 + i * 8
}

fn next_leaf(n: u64) -> u64 {
    n + 248
}

#[derive(Clone, Debug)]
pub struct BpTree {
    root: u64,
    count: u64,
    arena: Arena,
}

impl BpTree {
    pub fn new(base: u64, arena: Arena) -> Self {
        BpTree { root: base, count: base + 8, arena }
    }

    fn meta(m: &mut dyn Mem, n: u64) -> SimResult<(u64, bool)> {
        let v = m.load(n)?;
        Ok((v >> 1, v & 1 == 1))
    }

    fn set_meta(m: &mut dyn Mem, n: u64, count: u64, leaf: bool) -> SimResult<()> {
        m.store(n, count << 1 | leaf as u64)
    }

    /// Index of the child to follow for `key` in an inner node.
    fn route(m: &mut dyn Mem, n: u64, count: u64, key: u64) -> SimResult<u64> {
        let mut i = 0;
        while i < count {
            m.compute(1)?;
            if key < m.load(key_at(n, i))? {
                break;
            }
            i += 1;
        }
        Ok(i)
    }

    /// Splits the full child `c` at position `i` of `parent` (whose count is
    /// `pc`, not full).
    fn split_child(&mut self, m: &mut dyn Mem, parent: u64, pc: u64, i: u64, c: u64) -> SimResult<()> {
        let (_, leaf) = Self::meta(m, c)?;
        let r = self.arena.alloc(NODE);
        let sep;
        if leaf {
            // Left keeps 8, right takes 7; the separator is copied up.
            for j in 8..MAX_KEYS {
                let k = m.load(key_at(c, j))?;
                let v = m.load(slot_at(c, j))?;
                m.store(key_at(r, j - 8), k)?;
                m.store(slot_at(r, j - 8), v)?;
            }
            sep = m.load(key_at(r, 0))?;
            let nx = m.load(next_leaf(c))?;
            m.store(next_leaf(r), nx)?;
            m.store(next_leaf(c), r)?;
            Self::set_meta(m, r, MAX_KEYS - 8, true)?;
            Self::set_meta(m, c, 8, true)?;
        } else {
            // Left keeps 7 keys / 8 children, key 7 moves up.
            sep = m.load(key_at(c, 7))?;
            for j in 8..MAX_KEYS {
                let k = m.load(key_at(c, j))?;
                m.store(key_at(r, j - 8), k)?;
            }
            for j in 8..=MAX_KEYS {
                let ch = m.load(slot_at(c, j))?;
                m.store(slot_at(r, j - 8), ch)?;
            }
            Self::set_meta(m, r, 7, false)?;
            Self::set_meta(m, c, 7, false)?;
        }
        // Shift parent keys i.. and children i+1.. right by one.
        let mut j = pc;
        while j > i {
            let k = m.load(key_at(parent, j - 1))?;
            m.store(key_at(parent, j), k)?;
            let ch = m.load(slot_at(parent, j))?;
            m.store(slot_at(parent, j + 1), ch)?;
            j -= 1;
        }
        m.store(key_at(parent, i), sep)?;
        m.store(slot_at(parent, i + 1), r)?;
        Self::set_meta(m, parent, pc + 1, false)
    }

    fn insert(&mut self, m: &mut dyn Mem, key: u64, value: u64) -> SimResult<()> {
        let mut n = m.load(self.root)?;
        if n == 0 {
            n = self.arena.alloc(NODE);
            Self::set_meta(m, n, 0, true)?;
            m.store(next_leaf(n), 0)?;
            m.store(self.root, n)?;
        }
        let (rc, _) = Self::meta(m, n)?;
        if rc == MAX_KEYS {
            let r = self.arena.alloc(NODE);
            Self::set_meta(m, r, 0, false)?;
            m.store(slot_at(r, 0), n)?;
            self.split_child(m, r, 0, 0, n)?;
            m.store(self.root, r)?;
            n = r;
        }
        loop {
            let (c, leaf) = Self::meta(m, n)?;
            if leaf {
                return self.leaf_insert(m, n, c, key, value);
            }
            let mut i = Self::route(m, n, c, key)?;
            let mut child = m.load(slot_at(n, i))?;
            let (cc, _) = Self::meta(m, child)?;
            if cc == MAX_KEYS {
                self.split_child(m, n, c, i, child)?;
                if key >= m.load(key_at(n, i))? {
                    i += 1;
                }
                child = m.load(slot_at(n, i))?;
            }
            n = child;
        }
    }

    fn leaf_insert(&mut self, m: &mut dyn Mem, n: u64, c: u64, key: u64, value: u64) -> SimResult<()> {
        let mut i = 0;
        while i < c {
            m.compute(1)?;
            let k = m.load(key_at(n, i))?;
            if k == key {
                return m.store(slot_at(n, i), value);
            }
            if key < k {
                break;
            }
            i += 1;
        }
        let mut j = c;
        while j > i {
            let k = m.load(key_at(n, j - 1))?;
            let v = m.load(slot_at(n, j - 1))?;
            m.store(key_at(n, j), k)?;
            m.store(slot_at(n, j), v)?;
            j -= 1;
        }
        m.store(key_at(n, i), key)?;
        m.store(slot_at(n, i), value)?;
        Self::set_meta(m, n, c + 1, true)?;
        let cnt = m.load(self.count)?;
        m.store(self.count, cnt + 1)
    }

    fn delete(&mut self, m: &mut dyn Mem, key: u64) -> SimResult<()> {
        let mut n = m.load(self.root)?;
        if n == 0 {
            return Err(SimError::SimFault(format!("delete of missing key {key}")));
        }
        loop {
            let (c, leaf) = Self::meta(m, n)?;
            if !leaf {
                let i = Self::route(m, n, c, key)?;
                n = m.load(slot_at(n, i))?;
                continue;
            }
            let mut i = 0;
            while i < c && m.load(key_at(n, i))? != key {
                m.compute(1)?;
                i += 1;
            }
            if i == c {
                return Err(SimError::SimFault(format!("delete of missing key {key}")));
            }
            for j in i + 1..c {
                let k = m.load(key_at(n, j))?;
                let v = m.load(slot_at(n, j))?;
                m.store(key_at(n, j - 1), k)?;
                m.store(slot_at(n, j - 1), v)?;
            }
            Self::set_meta(m, n, c - 1, true)?;
            let cnt = m.load(self.count)?;
            return m.store(self.count, cnt - 1);
        }
    }

    fn walk(
        &self,
        peek: &Peek,
        n: u64,
        lo: Option<u64>,
        hi: Option<u64>,
        depth: u64,
        leaves: &mut Vec<(u64, u64)>,
    ) -> Result<(), String> {
        let meta = peek(n);
        let (c, leaf) = (meta >> 1, meta & 1 == 1);
        if c > MAX_KEYS {
            return Err(format!("node {n:#x} holds {c} keys"));
        }
        let keys: Vec<u64> = (0..c).map(|i| peek(key_at(n, i))).collect();
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("node {n:#x} keys unsorted"));
        }
        if keys.iter().any(|&k| lo.is_some_and(|l| k < l) || hi.is_some_and(|h| k >= h)) {
            return Err(format!("node {n:#x} key outside parent range"));
        }
        if leaf {
            leaves.push((n, depth));
            return Ok(());
        }
        for i in 0..=c {
            let clo = if i == 0 { lo } else { Some(keys[i as usize - 1]) };
            let chi = if i == c { hi } else { Some(keys[i as usize]) };
            self.walk(peek, peek(slot_at(n, i)), clo, chi, depth + 1, leaves)?;
        }
        Ok(())
    }
}

impl Structure for BpTree {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::Insert { key, value } => self.insert(m, key, value),
            Op::Delete { key } => self.delete(m, key),
            other => Err(SimError::Invalid(format!("bptree cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let root = peek(self.root);
        if root == 0 {
            return Ok(Vec::new());
        }
        let mut leaves = Vec::new();
        self.walk(peek, root, None, None, 0, &mut leaves)?;
        if leaves.windows(2).any(|w| w[0].1 != w[1].1) {
            return Err("leaves at different depths".into());
        }
        // The leaf chain must visit the leaves in key order.
        let mut out = Vec::new();
        let mut n = leaves[0].0;
        let mut seen = 0;
        while n != 0 {
            if leaves.get(seen).map(|l| l.0) != Some(n) {
                return Err("leaf chain out of order".into());
            }
            let c = peek(n) >> 1;
            out.extend((0..c).map(|i| (peek(key_at(n, i)), peek(slot_at(n, i)))));
            seen += 1;
            n = peek(next_leaf(n));
        }
        if seen != leaves.len() {
            return Err("leaf chain misses leaves".into());
        }
        if out.len() as u64 != peek(self.count) {
            return Err(format!("count {} but {} keys", peek(self.count), out.len()));
        }
        Ok(out)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
