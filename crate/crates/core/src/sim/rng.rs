//! Versioned random source for the simulator.
//!
//! `SimRng` v1 is ChaCha8 (`rand_chacha` 0.3, `seed_from_u64`) on a chosen
//! stream id; scenes use stream 0 and the synthetic detector stream 1, so the
//! two never share draws. All derived variates are implemented here, so output
//! depends only on the ChaCha8 word sequence:
//!
//! * uniform `[0,1)`: top 53 bits of one `u64`
//! * normal: Box–Muller, cosine branch only (two uniforms per variate)
//! * Poisson: sequential inversion (one uniform)
//! * gamma: Marsaglia–Tsang (normals + uniforms), with the `U^(1/a)` boost for `a < 1`
//! * beta: `X / (X + Y)` with `X ~ Γ(a)`, `Y ~ Γ(b)` drawn in that order

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RNG_VERSION: &str = "chacha8-v1";

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng { inner }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        lo + ((self.uniform() * span) as usize).min(hi - lo)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn poisson(&mut self, lambda: f64) -> usize {
        if !(lambda > 0.0) {
            return 0;
        }
        let u = self.uniform();
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0usize;
        // the tail cap only matters when exp(-λ) underflows (λ > ~700)
        while u > cdf && k < 10_000 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            let u = 1.0 - self.uniform();
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = 1.0 - self.uniform();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        let x = self.gamma(a);
        let y = self.gamma(b);
        if x + y == 0.0 {
            0.5
        } else {
            x / (x + y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = SimRng::new(7, 0);
        let mut b = SimRng::new(7, 0);
        let mut c = SimRng::new(7, 1);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.uniform()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn moments_are_plausible() {
        let mut r = SimRng::new(1, 0);
        let n = 20_000;
        let normals: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = normals.iter().sum::<f64>() / n as f64;
        let var = normals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");

        let pois = (0..n).map(|_| r.poisson(4.0) as f64).sum::<f64>() / n as f64;
        assert!((pois - 4.0).abs() < 0.08, "{pois}");

        for (a, b) in [(2.0, 5.0), (0.5, 0.5), (8.0, 2.0)] {
            let m = (0..n).map(|_| r.beta(a, b)).sum::<f64>() / n as f64;
            assert!((m - a / (a + b)).abs() < 0.01, "beta({a},{b}) mean {m}");
        }
        let g = (0..n).map(|_| r.gamma(0.3)).sum::<f64>() / n as f64;
        assert!((g - 0.3).abs() < 0.03, "{g}");
        assert_eq!(r.poisson(0.0), 0);
    }

    #[test]
    fn int_range_covers_bounds() {
        let mut r = SimRng::new(3, 0);
        let xs: Vec<usize> = (0..2000).map(|_| r.int_inclusive(2, 5)).collect();
        assert!(xs.iter().all(|&x| (2..=5).contains(&x)));
        assert!(xs.contains(&2) && xs.contains(&5));
    }
}
