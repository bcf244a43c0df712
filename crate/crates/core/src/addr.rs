//! Physical address model.
//!
//! Workload data lives at "home" addresses below [`LOG_ZONE_BASE`]; the log
//! zone occupies a reserved range starting there.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::config::CacheLevelConfig;

/// Cache line size in bytes. Fixed for the whole simulator.
pub const LINE_BYTES: u64 = 64;
pub const LINE_SHIFT: u32 = 6;

/// First byte of the reserved log zone. Home addresses must stay below it.
pub const LOG_ZONE_BASE: u64 = 1 << 40;

/// Raw bytes of one cache line.
pub type LineBytes = [u8; LINE_BYTES as usize];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u64);

impl Address {
    pub const fn new(value: u64) -> Self {
        Address(value)
    }

    /// Line-aligned address containing this byte.
    pub const fn line(self) -> Address {
        Address(self.0 & !(LINE_BYTES - 1))
    }

    pub const fn offset(self) -> usize {
        (self.0 & (LINE_BYTES - 1)) as usize
    }

    pub const fn is_line_aligned(self) -> bool {
        self.0 & (LINE_BYTES - 1) == 0
    }

    pub const fn line_number(self) -> u64 {
        self.0 >> LINE_SHIFT
    }

    pub const fn is_home(self) -> bool {
        self.0 < LOG_ZONE_BASE
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl From<u64> for Address {
    fn from(v: u64) -> Self {
        Address(v)
    }
}

/// Decomposition of an address for one cache level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddressFields {
    pub tag: u64,
    pub set_index: u64,
    pub offset: u64,
}

/// Splits `addr` into (tag, set, offset) for a cache with `sets` sets.
///
/// Set counts need not be powers of two (the 8x-shrunk L1D has 15 sets), so
/// the set index is the line number modulo `sets` and the tag the quotient.
pub fn split_with_sets(addr: Address, sets: u64) -> AddressFields {
    let line = addr.line_number();
    AddressFields {
        tag: line / sets,
        set_index: line % sets,
        offset: addr.0 & (LINE_BYTES - 1),
    }
}

pub fn split_address(addr: Address, level: &CacheLevelConfig) -> AddressFields {
    split_with_sets(addr, level.sets())
}

/// Inverse of [`split_with_sets`].
pub fn recombine(fields: AddressFields, sets: u64) -> Address {
    Address(((fields.tag * sets + fields.set_index) << LINE_SHIFT) | fields.offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: walk line numbers in order and assign sets round-robin.
    fn table_oracle(addr: u64, sets: u64) -> (u64, u64, u64) {
        let mut line = 0u64;
        let mut set = 0u64;
        let mut tag = 0u64;
        while line < addr / 64 {
            line += 1;
            set += 1;
            if set == sets {
                set = 0;
                tag += 1;
            }
        }
        (tag, set, addr % 64)
    }

    #[test]
    fn zero_address() {
        let f = split_with_sets(Address(0), 128);
        assert_eq!((f.tag, f.set_index, f.offset), (0, 0, 0));
    }

    #[test]
    fn second_line_lands_in_set_one() {
        let f = split_with_sets(Address(0x40), 128);
        assert_eq!((f.tag, f.set_index, f.offset), table_oracle(0x40, 128));
        assert_eq!(f.set_index, 1);
        assert_eq!(f.offset, 0);
    }

    #[test]
    fn last_byte_of_line_shares_set() {
        let a = split_with_sets(Address(0x7F), 128);
        let b = split_with_sets(Address(0x40), 128);
        assert_eq!(a.offset, 0x3F);
        assert_eq!(a.set_index, b.set_index);
        assert_eq!((a.tag, a.set_index, a.offset), table_oracle(0x7F, 128));
    }

    #[test]
    fn generated_table_matches_oracle() {
        for sets in [1u64, 15, 64, 128] {
            for addr in (0..sets * 64 * 3).step_by(13) {
                let f = split_with_sets(Address(addr), sets);
                assert_eq!((f.tag, f.set_index, f.offset), table_oracle(addr, sets), "addr {addr} sets {sets}");
            }
        }
    }

    #[test]
    fn round_trip_million_addresses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let addr = Address(rng.random_range(0..LOG_ZONE_BASE));
            let sets = [15u64, 64, 128, 512, 16384][rng.random_range(0..5)];
            assert_eq!(recombine(split_with_sets(addr, sets), sets), addr);
        }
    }

    proptest! {
        #[test]
        fn recombine_is_identity(addr in 0u64..(1u64 << 48), sets in 1u64..70_000) {
            prop_assert_eq!(recombine(split_with_sets(Address(addr), sets), sets), Address(addr));
        }
    }
}
