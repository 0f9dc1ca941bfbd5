#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

#[cfg(test)]
pub(crate) mod testutil {
    /// xorshift generator for deterministic test fixtures.
    pub(crate) struct SmallRng(u64);

    impl SmallRng {
        pub(crate) fn new(seed: u64) -> Self {
            Self(seed.max(1))
        }
        pub(crate) fn next_u64(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            x
        }
        pub(crate) fn next_f64(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        }
        /// uniform in [lo, hi)
        pub(crate) fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.next_f64()
        }
    }
}

pub mod decoy_finite;
pub mod interference;
pub mod keyrate;
pub mod photon_stats;
pub mod spectra;
pub mod units;

pub use num_complex::Complex64;
