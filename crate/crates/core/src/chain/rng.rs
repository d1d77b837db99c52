//! Counter-based random streams.
//!
//! Stream `k` of a run draws its `i`-th 64-bit word as
//! `mix64(key + i·0x9E3779B97F4A7C15)` where `mix64` is the SplitMix64
//! finalizer. Uniforms use the top 53 bits shifted to the open interval
//! `(0, 1)`; Gaussians use the Box-Muller transform, consuming two uniforms
//! per pair and returning the cosine branch first.

use std::f64::consts::PI;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica / substream `index` under `master`.
///
/// `derive_seed(m, k) = mix64(m ^ mix64(k + γ))` with `γ` the golden gamma.
/// Independent of scheduling order by construction.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngStream {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            key: seed,
            counter: 0,
            spare: None,
        }
    }

    /// Stream for replica `index` of a run seeded with `master`.
    pub fn for_replica(master: u64, index: u64) -> Self {
        RngStream::new(derive_seed(master, index))
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard Gaussian via Box-Muller.
    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Source of the Gaussians used by the velocity refresh.
///
/// The refresh asks for one value per coordinate, particle-major,
/// coordinate-minor, and tells the source which particle it is serving.
pub trait NoiseSource {
    fn gaussian(&mut self, particle: usize) -> f64;
}

impl NoiseSource for RngStream {
    #[inline]
    fn gaussian(&mut self, _particle: usize) -> f64 {
        RngStream::gaussian(self)
    }
}

/// Deterministic zero noise (the refresh reduces to `v ← ηv`).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn gaussian(&mut self, _particle: usize) -> f64 {
        0.0
    }
}

/// One independent stream per particle.
///
/// Relabeling particles together with their streams relabels the whole
/// trajectory, which makes exchangeability checkable bitwise.
#[derive(Debug, Clone)]
pub struct ParticleStreams {
    streams: Vec<RngStream>,
}

impl ParticleStreams {
    /// Stream `i` is seeded with `derive_seed(master, i)`.
    pub fn new(master: u64, n: usize) -> Self {
        ParticleStreams {
            streams: (0..n as u64)
                .map(|i| RngStream::for_replica(master, i))
                .collect(),
        }
    }

    pub fn from_streams(streams: Vec<RngStream>) -> Self {
        ParticleStreams { streams }
    }

    /// Stream `i` of the result is stream `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ParticleStreams {
            streams: perm.iter().map(|&p| self.streams[p].clone()).collect(),
        }
    }
}

impl NoiseSource for ParticleStreams {
    fn gaussian(&mut self, particle: usize) -> f64 {
        self.streams[particle].gaussian()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..1000 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn uniform_in_open_interval() {
        let mut r = RngStream::new(0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn gaussian_first_moments() {
        let mut r = RngStream::new(12345);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|k| derive_seed(42, k)).collect();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), s.len());
    }
}
