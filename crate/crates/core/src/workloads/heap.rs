//! Array-based binary min-heap of 16-byte `(key, value)` entries.
//!
//! Header `[size]` at `base`, entries from `base + 64`.

use super::{Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

const ENTRY: u64 = 16;

#[derive(Clone, Debug)]
pub struct Heap {
    size: u64,
    arr: u64,
    cap: u64,
}

impl Heap {
    pub fn new(base: u64, cap: u64) -> Self {
        Heap { size: base, arr: base + 64, cap }
    }

    fn at(&self, i: u64) -> u64 {
        self.arr + i * ENTRY
    }

    fn insert(&mut self, m: &mut dyn Mem, key: u64, value: u64) -> SimResult<()> {
        let n = m.load(self.size)?;
        if n >= self.cap {
            return Err(SimError::SimFault("heap capacity exceeded".into()));
        }
        let mut i = n;
        while i > 0 {
            m.compute(2)?;
            let p = (i - 1) / 2;
            let pk = m.load(self.at(p))?;
            if pk <= key {
                break;
            }
            let pv = m.load(self.at(p) + 8)?;
            m.store(self.at(i), pk)?;
            m.store(self.at(i) + 8, pv)?;
            i = p;
        }
        m.store(self.at(i), key)?;
        m.store(self.at(i) + 8, value)?;
        m.store(self.size, n + 1)
    }

    fn delete_min(&mut self, m: &mut dyn Mem) -> SimResult<()> {
        let n = m.load(self.size)?;
        if n == 0 {
            return Err(SimError::SimFault("delete from an empty heap".into()));
        }
        m.load(self.at(0))?;
        let n = n - 1;
        m.store(self.size, n)?;
        if n == 0 {
            return Ok(());
        }
        let key = m.load(self.at(n))?;
        let value = m.load(self.at(n) + 8)?;
        let mut i = 0;
        loop {
            m.compute(2)?;
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let mut c = l;
            let mut ck = m.load(self.at(l))?;
            if l + 1 < n {
                let rk = m.load(self.at(l + 1))?;
                if rk < ck {
                    c = l + 1;
                    ck = rk;
                }
            }
            if key <= ck {
                break;
            }
            let cv = m.load(self.at(c) + 8)?;
            m.store(self.at(i), ck)?;
            m.store(self.at(i) + 8, cv)?;
            i = c;
        }
        m.store(self.at(i), key)?;
        m.store(self.at(i) + 8, value)
    }
}

impl Structure for Heap {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::Insert { key, value } => self.insert(m, key, value),
            Op::DeleteMin => self.delete_min(m),
            other => Err(SimError::Invalid(format!("binary_heap cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let n = peek(self.size);
        if n > self.cap {
            return Err(format!("size {n} exceeds capacity"));
        }
        let mut keys = Vec::with_capacity(n as usize);
        for i in 0..n {
            let k = peek(self.at(i));
            if i > 0 && peek(self.at((i - 1) / 2)) > k {
                return Err(format!("heap property violated at {i}"));
            }
            keys.push((k, 0));
        }
        keys.sort_unstable();
        Ok(keys)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
