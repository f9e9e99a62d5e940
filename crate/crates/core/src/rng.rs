//! Counter-based pseudorandomness and the heterodyne outcome density.
//!
//! Every random value in the crate is a pure function of
//! `(seed, domain_tag, index)`. There is no generator state to thread through
//! parallel code, so any schedule of workers reproduces the same bits.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Complex amplitude of a coherent state, or a heterodyne outcome.
pub type Amplitude = Complex64;

/// Weyl increment applied to the counter before mixing.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Published domain tags. Changing any of these changes every artifact.
pub mod tags {
    pub const BASIS: u64 = 0xB0;
    pub const KEY: u64 = 0x4B;
    pub const CHANNEL: u64 = 0xC4;
    pub const DECOY: u64 = 0xDE;
    pub const MONTE_CARLO: u64 = 0x3C;
}

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut y = x;
    y = (y ^ (y >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    y = (y ^ (y >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    y ^ (y >> 31)
}

/// A stateless random stream addressed by an explicit counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub domain_tag: u64,
}

impl RandomStream {
    pub const fn new(seed: u64, domain_tag: u64) -> Self {
        Self { seed, domain_tag }
    }

    /// A child stream whose tag is derived from this one and `label`.
    ///
    /// Used where one operation needs several independent draws per index
    /// (e.g. a ciphertext symbol and the channel noise for the same slot).
    pub fn derive(self, label: u64) -> Self {
        Self {
            seed: self.seed,
            domain_tag: mix64(self.domain_tag ^ mix64(label.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    #[inline]
    pub fn u64_at(&self, index: u64) -> u64 {
        mix64(self.seed ^ self.domain_tag ^ index.wrapping_mul(GOLDEN_GAMMA))
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    #[inline]
    pub fn uniform01(&self, index: u64) -> f64 {
        (self.u64_at(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Plain modulo reduction; the bias is below
    /// `n / 2^64`.
    #[inline]
    pub fn index_below(&self, index: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.u64_at(index) % n as u64) as usize
    }

    /// Complex Gaussian with independent quadratures of variance 1/2,
    /// built by Box–Muller from the uniforms at `2*index` and `2*index + 1`.
    #[inline]
    pub fn complex_normal(&self, index: u64) -> Amplitude {
        let u1 = self.uniform01(index.wrapping_mul(2));
        let u2 = self.uniform01(index.wrapping_mul(2).wrapping_add(1));
        // 1 - u1 lies in (0, 1], so the log is finite.
        let radius = (-(1.0 - u1).ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        Amplitude::new(radius * c, radius * s)
    }
}

/// Draws a heterodyne outcome `z ~ (1/pi) exp(-|z - alpha|^2)`.
#[inline]
pub fn sample_heterodyne(alpha: Amplitude, stream: &RandomStream, index: u64) -> Amplitude {
    alpha + stream.complex_normal(index)
}

/// Heterodyne outcome density of a coherent state `alpha` at `z`.
#[inline]
pub fn heterodyne_pdf(alpha: Amplitude, z: Amplitude) -> f64 {
    (-(z - alpha).norm_sqr()).exp() / PI
}

/// Probability that a heterodyne outcome falls within distance `r` of the
/// state's amplitude: `1 - exp(-r^2)`.
pub fn circle_mass(r: f64) -> f64 {
    assert!(r >= 0.0, "circle radius must be nonnegative");
    -(-r * r).exp_m1()
}

/// `1 - circle_mass(r)` without cancellation.
pub fn circle_mass_complement(r: f64) -> f64 {
    (-r * r).exp()
}

/// Rejects non-finite amplitudes.
pub fn is_finite(a: Amplitude) -> bool {
    a.re.is_finite() && a.im.is_finite()
}
