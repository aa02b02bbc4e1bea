//! Seeded PCG32 random number generator with a Box–Muller Gaussian layer.
//!
//! The benchmark contract is that identical seeds reproduce identical
//! scenes byte for byte, so the generator is pinned here rather than left
//! to an external crate: PCG-XSH-RR 64/32 with stream 0, seeded with the
//! reference `srandom` sequence (state := 0, step, state += seed, step).
//! Uniform doubles use the full 32-bit output divided by 2^32; Gaussians
//! apply Box–Muller to consecutive 32-bit draws, caching the second value
//! of each pair.

const MULTIPLIER: u64 = 6364136223846793005;

#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
    cached_gauss: Option<f64>,
}

impl Pcg32 {
    /// Stream 0 generator: `inc = 1`.
    pub fn new(seed: u64) -> Self {
        let mut rng = Self {
            state: 0,
            inc: 1,
            cached_gauss: None,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform in `[0, 1)` with 32-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        self.next_u32() as f64 / 4294967296.0
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection, bias-free.
    pub fn next_below(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u32();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Standard normal draw via Box–Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gauss.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = (self.next_u32() as f64 + 1.0) / 4294967296.0;
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gauss = Some(r * theta.sin());
        r * theta.cos()
    }
}
