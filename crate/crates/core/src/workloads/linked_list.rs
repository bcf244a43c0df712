//! Doubly-linked list: insert at head, delete at tail.
//!
//! Header `[head, tail, count]`; node (640B, ten lines)
//! `[key, value, prev, next, payload...]` where payload word `i` holds
//! `value ^ i`, so a torn entry is detectable.

use super::{Arena, Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

const NODE: u64 = 640;
const PAYLOAD: u64 = 32;
const KEY: u64 = 0;
const VALUE: u64 = 8;
const PREV: u64 = 16;
const NEXT: u64 = 24;

#[derive(Clone, Debug)]
pub struct LinkedList {
    head: u64,
    tail: u64,
    count: u64,
    arena: Arena,
}

impl LinkedList {
    pub fn new(base: u64, arena: Arena) -> Self {
        LinkedList { head: base, tail: base + 8, count: base + 16, arena }
    }

    fn push_head(&mut self, m: &mut dyn Mem, key: u64, value: u64) -> SimResult<()> {
        let n = self.arena.alloc(NODE);
        let old = m.load(self.head)?;
        m.store(n + KEY, key)?;
        m.store(n + VALUE, value)?;
        m.store(n + PREV, 0)?;
        m.store(n + NEXT, old)?;
        for i in 0..(NODE - PAYLOAD) / 8 {
            m.store(n + PAYLOAD + i * 8, value ^ i)?;
        }
        if old != 0 {
            m.store(old + PREV, n)?;
        } else {
            m.store(self.tail, n)?;
        }
        m.store(self.head, n)?;
        let c = m.load(self.count)?;
        m.store(self.count, c + 1)
    }

    fn pop_tail(&mut self, m: &mut dyn Mem) -> SimResult<()> {
        let t = m.load(self.tail)?;
        if t == 0 {
            return Err(SimError::SimFault("pop from an empty list".into()));
        }
        let p = m.load(t + PREV)?;
        if p != 0 {
            m.store(p + NEXT, 0)?;
        } else {
            m.store(self.head, 0)?;
        }
        m.store(self.tail, p)?;
        let c = m.load(self.count)?;
        m.store(self.count, c - 1)?;
        self.arena.free(t, NODE);
        Ok(())
    }
}

impl Structure for LinkedList {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::PushHead { key, value } => self.push_head(m, key, value),
            Op::PopTail => self.pop_tail(m),
            other => Err(SimError::Invalid(format!("linked_list cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let mut out = Vec::new();
        let mut prev = 0;
        let mut n = peek(self.head);
        while n != 0 {
            if peek(n + PREV) != prev {
                return Err(format!("node {n:#x}: prev link broken"));
            }
            let value = peek(n + VALUE);
            if (0..(NODE - PAYLOAD) / 8).any(|i| peek(n + PAYLOAD + i * 8) != value ^ i) {
                return Err(format!("node {n:#x}: payload torn"));
            }
            out.push((peek(n + KEY), value));
            prev = n;
            n = peek(n + NEXT);
            if out.len() as u64 > peek(self.count) {
                return Err("list longer than its count".into());
            }
        }
        if peek(self.tail) != prev {
            return Err("tail does not point at the last node".into());
        }
        if out.len() as u64 != peek(self.count) {
            return Err(format!("count {} but {} nodes", peek(self.count), out.len()));
        }
        Ok(out)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
