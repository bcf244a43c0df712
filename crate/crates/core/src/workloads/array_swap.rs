//! Array of 256-byte elements; an operation swaps two whole elements.
//!
//! Word `w` of the element with identity `id` holds `id * 32 + w`.

use super::{Mem, Op, Peek, Structure};
use crate::error::{SimError, SimResult};

pub const ELEMENTS: u64 = 1 << 17;
const ELEMENT: u64 = 256;
const WORDS: u64 = ELEMENT / 8;

#[derive(Clone, Debug)]
pub struct ArraySwap {
    base: u64,
    n: u64,
}

impl ArraySwap {
    pub fn new(base: u64, n: u64) -> Self {
        ArraySwap { base, n }
    }

    fn at(&self, i: u64) -> u64 {
        self.base + i * ELEMENT
    }
}

impl Structure for ArraySwap {
    fn apply(&mut self, m: &mut dyn Mem, op: &Op) -> SimResult<()> {
        match *op {
            Op::Fill { i } => {
                for w in 0..WORDS {
                    m.store(self.at(i) + w * 8, i * WORDS + w)?;
                }
                Ok(())
            }
            Op::Swap { i, j } => {
                let (a, b) = (self.at(i), self.at(j));
                let mut x = [0u64; WORDS as usize];
                let mut y = [0u64; WORDS as usize];
                for w in 0..WORDS {
                    x[w as usize] = m.load(a + w * 8)?;
                    y[w as usize] = m.load(b + w * 8)?;
                }
                for w in 0..WORDS {
                    m.store(a + w * 8, y[w as usize])?;
                    m.store(b + w * 8, x[w as usize])?;
                }
                Ok(())
            }
            other => Err(SimError::Invalid(format!("array_swap cannot apply {other:?}"))),
        }
    }

    fn contents(&self, peek: &Peek) -> Result<Vec<(u64, u64)>, String> {
        let mut out = Vec::with_capacity(self.n as usize);
        for i in 0..self.n {
            let id = peek(self.at(i)) / WORDS;
            for w in 0..WORDS {
                if peek(self.at(i) + w * 8) != id * WORDS + w {
                    return Err(format!("element {i} torn at word {w}"));
                }
            }
            out.push((i, id));
        }
        Ok(out)
    }

    fn box_clone(&self) -> Box<dyn Structure> {
        Box::new(self.clone())
    }
}
