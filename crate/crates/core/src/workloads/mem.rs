//! The view data structures have of simulated memory.

use rustc_hash::FxHashMap;

use crate::addr::Address;
use crate::error::SimResult;
use crate::pmem::PmemDevice;

/// Word-granular access to simulated memory. Every call is charged by the
/// design driving it.
pub trait Mem {
    fn load(&mut self, addr: u64) -> SimResult<u64>;
    fn store(&mut self, addr: u64, v: u64) -> SimResult<()>;
    /// `n` cycles of non-memory work.
    fn compute(&mut self, n: u64) -> SimResult<()>;
}

/// Side-effect-free read of committed memory, for integrity checks.
pub type Peek<'a> = dyn Fn(u64) -> u64 + 'a;

/// Bump allocator with per-size free lists. Lives on the host: it is the
/// program's volatile heap metadata, replayed identically for every design.
#[derive(Clone, Debug)]
pub struct Arena {
    next: u64,
    end: u64,
    free: FxHashMap<u64, Vec<u64>>,
}

impl Arena {
    pub fn new(base: u64, bytes: u64) -> Self {
        Arena { next: base, end: base + bytes, free: FxHashMap::default() }
    }

    /// `size` is rounded up to a power of two and the block aligned to it
    /// (capped at a cache line), so small nodes never straddle lines.
    pub fn alloc(&mut self, size: u64) -> u64 {
        let size = size.next_power_of_two().max(8);
        if let Some(a) = self.free.get_mut(&size).and_then(Vec::pop) {
            return a;
        }
        let align = size.min(64);
        let a = self.next.div_ceil(align) * align;
        assert!(a + size <= self.end, "simulated heap exhausted");
        self.next = a + size;
        a
    }

    pub fn free(&mut self, addr: u64, size: u64) {
        let size = size.next_power_of_two().max(8);
        self.free.entry(size).or_default().push(addr);
    }
}

/// Writes straight into the pmem home range, bypassing caches and timing.
/// Used to build the initial image of a structure before a run.
pub struct ImageMem<'a> {
    pub pmem: &'a mut PmemDevice,
}

impl Mem for ImageMem<'_> {
    fn load(&mut self, addr: u64) -> SimResult<u64> {
        let a = Address(addr);
        let d = self.pmem.peek_home(a.line());
        Ok(u64::from_le_bytes(d[a.offset()..a.offset() + 8].try_into().expect("8 bytes")))
    }

    fn store(&mut self, addr: u64, v: u64) -> SimResult<()> {
        let a = Address(addr);
        let mut d = self.pmem.peek_home(a.line());
        d[a.offset()..a.offset() + 8].copy_from_slice(&v.to_le_bytes());
        self.pmem.write_home(a.line(), &d);
        Ok(())
    }

    fn compute(&mut self, _: u64) -> SimResult<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_aligned_and_reused() {
        let mut a = Arena::new(0x1000, 1 << 20);
        let x = a.alloc(32);
        let y = a.alloc(256);
        assert_eq!(x % 32, 0);
        assert_eq!(y % 64, 0);
        a.free(x, 32);
        assert_eq!(a.alloc(24), x);
    }
}
