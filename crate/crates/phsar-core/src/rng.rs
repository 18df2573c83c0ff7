//! Deterministic pseudo-random numbers.
//!
//! Everything stochastic in this crate (k-means++ seeding, synthetic test
//! images) flows through this one generator so that a recorded seed fully
//! reproduces a run. No entropy source is ever consulted.

/// An xorshift64* generator.
///
/// Small, fast, and good enough for seeding and sampling; not cryptographic.
#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    /// The xorshift state must be non-zero; seed 0 maps to a fixed odd
    /// constant so that every u64 is a valid seed.
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 {
            0x9e37_79b9_7f4a_7c15
        } else {
            seed
        };
        XorShift64Star { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..n. The modulo bias is irrelevant at the n used here.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index over empty range");
        (self.next_u64() % n as u64) as usize
    }
}
