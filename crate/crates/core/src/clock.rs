//! Cycle accounting.

/// Monotone cycle counter with a sub-cycle remainder so fractional charges
/// (e.g. a 30% tag-latency penalty on a 2-cycle hit) accumulate exactly.
#[derive(Clone, Debug, Default)]
pub struct Clock {
    cycles: u64,
    millis: u64,
}

impl Clock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.cycles
    }

    /// Advances by whole cycles and returns the new absolute count.
    pub fn advance(&mut self, cycles: u64) -> u64 {
        self.cycles += cycles;
        self.cycles
    }

    /// Advances by `cycles * permille / 1000`, carrying the remainder.
    pub fn advance_permille(&mut self, cycles: u64, permille: u64) -> u64 {
        self.millis += cycles * permille;
        self.cycles += self.millis / 1000;
        self.millis %= 1000;
        self.cycles
    }

    /// Moves forward to `t` if it lies in the future. Never moves backwards.
    pub fn advance_to(&mut self, t: u64) -> u64 {
        if t > self.cycles {
            self.cycles = t;
        }
        self.cycles
    }
}

/// Converts nanoseconds to cycles at `ghz`, rounding to nearest.
pub fn ns_to_cycles(ns: u64, ghz: f64) -> u64 {
    (ns as f64 * ghz).round() as u64
}

/// Converts a cycle count to simulated microseconds.
pub fn cycles_to_us(cycles: u64, ghz: f64) -> f64 {
    cycles as f64 / (ghz * 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_from_zero() {
        let mut c = Clock::new();
        assert_eq!(c.advance(10), 10);
        assert_eq!(c.advance(0), 10);
    }

    #[test]
    fn write_latency_unit_conversion() {
        // 100 ns at 3 GHz: 100e-9 s * 3e9 cycles/s.
        let expected = (100e-9_f64 * 3e9).round() as u64;
        assert_eq!(expected, 300);
        assert_eq!(ns_to_cycles(100, 3.0), expected);
        assert_eq!(ns_to_cycles(150, 3.0), 450);
    }

    #[test]
    fn fractional_penalty_accumulates() {
        let mut c = Clock::new();
        for _ in 0..10 {
            c.advance_permille(2, 300);
        }
        // 10 * 0.6 cycles
        assert_eq!(c.now(), 6);
    }

    #[test]
    fn advance_to_is_monotone() {
        let mut c = Clock::new();
        c.advance(50);
        assert_eq!(c.advance_to(20), 50);
        assert_eq!(c.advance_to(70), 70);
    }
}
