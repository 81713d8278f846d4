//! Counter-based random number generation.
//!
//! Every draw is a pure function of `(seed, stream, step, cell)`, so paths,
//! samples and modes can be generated in any order — or on any number of
//! threads — and still produce identical numbers. There is no mutable RNG
//! state anywhere in the crate.

use num_complex::Complex64;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_MULT: u64 = 0xd134_2543_de82_ef95;
const STEP_MULT: u64 = 0xa076_1d64_78bd_642f;
const CELL_MULT: u64 = 0xe703_7ed1_a0b4_28db;

/// SplitMix64 finalizer: a full-avalanche 64-bit mix.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A keyed stream of reproducible random numbers.
///
/// `seed` is user-facing; `stream` separates independent purposes
/// (per-sample noise, initial-condition draws, dictionary directions, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngKey {
    state: u64,
}

impl RngKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        let s = mix64(seed ^ GOLDEN);
        RngKey {
            state: mix64(s ^ stream.wrapping_mul(STREAM_MULT)),
        }
    }

    /// Derive a child key; used to give each Monte Carlo sample its own stream.
    pub fn substream(self, idx: u64) -> Self {
        RngKey {
            state: mix64(self.state ^ idx.wrapping_mul(STREAM_MULT) ^ GOLDEN),
        }
    }

    #[inline(always)]
    pub fn raw(&self, step: u64, cell: u64) -> u64 {
        let z = mix64(self.state ^ step.wrapping_mul(STEP_MULT));
        mix64(z ^ cell.wrapping_mul(CELL_MULT))
    }

    /// Uniform in (0, 1]: never returns 0, safe under `ln`.
    #[inline(always)]
    pub fn uniform(&self, step: u64, cell: u64) -> f64 {
        (((self.raw(step, cell) >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Two independent standard normals via Box–Muller.
    #[inline(always)]
    pub fn normal_pair(&self, step: u64, cell: u64) -> (f64, f64) {
        let u1 = self.uniform(step, 2 * cell);
        let u2 = self.uniform(step, 2 * cell + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// One standard normal (discards the second of the pair).
    pub fn normal(&self, step: u64, cell: u64) -> f64 {
        self.normal_pair(step, cell).0
    }

    /// Standard complex Gaussian: E|g|^2 = 1, real and imaginary parts
    /// independent N(0, 1/2).
    #[inline(always)]
    pub fn standard_complex(&self, step: u64, cell: u64) -> Complex64 {
        let (a, b) = self.normal_pair(step, cell);
        Complex64::new(a * std::f64::consts::FRAC_1_SQRT_2, b * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Stream ids for the fixed purposes inside the crate. Keeping them in one
/// place guarantees two subsystems never alias a stream by accident.
pub mod streams {
    pub const PATH_NOISE: u64 = 0x01;
    pub const INITIAL_STATE: u64 = 0x02;
    pub const DIRECTIONS: u64 = 0x03;
    pub const DICTIONARY: u64 = 0x04;
    pub const SEARCH: u64 = 0x05;
    pub const CHAIN: u64 = 0x06;
}
