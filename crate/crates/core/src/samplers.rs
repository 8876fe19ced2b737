//! Seeded random sources producing exactly the distributions the
//! estimators need.
//!
//! The generator is pinned so that a seed reproduces the same stream on
//! every platform and build: state comes from SplitMix64 over the seed,
//! the core generator is xoshiro256++ (Blackman & Vigna), uniforms take
//! the top 53 bits, and Gaussians use Box-Muller with two fresh uniforms
//! per draw (no spare caching). Changing any of these would silently
//! break stored runs, so don't.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("empty interval: a={a} >= b={b}")]
    EmptyInterval { a: f64, b: f64 },
    #[error("beta parameter must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("sphere dimension must be >= 1, got {0}")]
    BadDimension(usize),
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic xoshiro256++ stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    s: [u64; 4],
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        if s == [0, 0, 0, 0] {
            s[0] = 1; // xoshiro state must not be all zero
        }
        Self { s }
    }

    /// Derive an independent stream from a master seed and a stream id.
    /// Streams with distinct ids never share state.
    pub fn substream(master: u64, id: u64) -> Self {
        let mut sm = id;
        let salt = splitmix64(&mut sm);
        Self::new(master ^ salt)
    }

    #[inline]
    fn rotl(x: u64, k: u32) -> u64 {
        (x << k) | (x >> (64 - k))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = Self::rotl(self.s[0].wrapping_add(self.s[3]), 23).wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = Self::rotl(self.s[3], 45);
        result
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn u01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in (0, 1]; used where a zero draw would divide by zero.
    #[inline]
    pub fn u01_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller (cosine branch only).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.u01_open();
        let u2 = self.u01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Uniform draw on [a, b).
pub fn uniform(rng: &mut RngStream, a: f64, b: f64) -> Result<f64, SamplerError> {
    if !(a < b) {
        return Err(SamplerError::EmptyInterval { a, b });
    }
    Ok(a + (b - a) * rng.u01())
}

/// Beta(beta, 1) by inverse CDF: U^(1/beta) for U ~ U(0,1].
///
/// This is exact and branch-free; every Beta shape the estimators need
/// has second parameter 1.
pub fn beta_one(rng: &mut RngStream, beta: f64) -> Result<f64, SamplerError> {
    if !(beta > 0.0) {
        return Err(SamplerError::NonPositiveBeta(beta));
    }
    Ok(beta_one_from_uniform(rng.u01_open(), beta))
}

/// Inverse CDF of Beta(beta, 1) applied to a uniform draw.
#[inline]
pub fn beta_one_from_uniform(u: f64, beta: f64) -> f64 {
    u.powf(1.0 / beta)
}

/// Uniform unit vector on S^(d-1): normalized independent Gaussians,
/// resampled in the (practically impossible) all-zero case.
pub fn unit_sphere(rng: &mut RngStream, d: usize, out: &mut Vec<f64>) -> Result<(), SamplerError> {
    if d < 1 {
        return Err(SamplerError::BadDimension(d));
    }
    out.clear();
    out.resize(d, 0.0);
    loop {
        let mut norm_sq = 0.0;
        for x in out.iter_mut() {
            *x = rng.normal();
            norm_sq += *x * *x;
        }
        if norm_sq > 0.0 {
            let inv = 1.0 / norm_sq.sqrt();
            for x in out.iter_mut() {
                *x *= inv;
            }
            return Ok(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_in_range_and_mean() {
        let mut rng = RngStream::new(7);
        let mut sum = 0.0;
        for _ in 0..100_000 {
            let u = uniform(&mut rng, 0.0, 1.0).unwrap();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 1e5 - 0.5).abs() < 0.01);

        let mut rng = RngStream::new(9);
        for _ in 0..1000 {
            let u = uniform(&mut rng, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
                .unwrap();
            assert!(u.abs() <= std::f64::consts::FRAC_PI_2);
        }
        assert!(uniform(&mut rng, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_one_shapes() {
        // Beta(1,1) is uniform: mean 1/2
        let mut rng = RngStream::new(1);
        let mean: f64 = (0..100_000)
            .map(|_| beta_one(&mut rng, 1.0).unwrap())
            .sum::<f64>()
            / 1e5;
        assert!((mean - 0.5).abs() < 0.01);

        // mean of Beta(b,1) is b/(b+1): 1/3 for b = 1/2
        let mut rng = RngStream::new(2);
        let mean: f64 = (0..100_000)
            .map(|_| beta_one(&mut rng, 0.5).unwrap())
            .sum::<f64>()
            / 1e5;
        assert!((mean - 1.0 / 3.0).abs() < 0.01);

        assert_eq!(beta_one_from_uniform(1.0, 0.37), 1.0);
        assert!(beta_one(&mut rng, 0.0).is_err());
    }

    #[test]
    fn beta_one_kolmogorov_smirnov() {
        // KS against F(r) = r^beta at significance 0.01 with n = 1e4:
        // critical value 1.628 / sqrt(n).
        let n = 10_000usize;
        let crit = 1.628 / (n as f64).sqrt();
        for (i, &beta) in [0.25, 0.5, 1.0, 1.5, 3.5].iter().enumerate() {
            let mut rng = RngStream::new(100 + i as u64);
            let mut xs: Vec<f64> = (0..n).map(|_| beta_one(&mut rng, beta).unwrap()).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut d: f64 = 0.0;
            for (k, &x) in xs.iter().enumerate() {
                let f = x.powf(beta);
                d = d.max((f - k as f64 / n as f64).abs());
                d = d.max((f - (k + 1) as f64 / n as f64).abs());
            }
            assert!(d < crit, "KS statistic {d} exceeds {crit} for beta={beta}");
        }
    }

    #[test]
    fn unit_sphere_properties() {
        let mut rng = RngStream::new(5);
        let mut v = Vec::new();

        // d=1: only +-1, both occurring
        let mut seen = [false; 2];
        for _ in 0..64 {
            unit_sphere(&mut rng, 1, &mut v).unwrap();
            assert!((v[0].abs() - 1.0).abs() < 1e-12);
            seen[usize::from(v[0] > 0.0)] = true;
        }
        assert!(seen[0] && seen[1]);

        // d=3: unit norm, component means near zero
        let mut means = [0.0f64; 3];
        let n = 100_000;
        for _ in 0..n {
            unit_sphere(&mut rng, 3, &mut v).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for (m, x) in means.iter_mut().zip(&v) {
                *m += x;
            }
        }
        for m in means {
            assert!((m / n as f64).abs() < 0.02);
        }

        assert!(unit_sphere(&mut rng, 0, &mut v).is_err());
    }

    #[test]
    fn seed_reproducibility() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        // distinct substreams diverge
        let mut c = RngStream::substream(42, 1);
        let mut d = RngStream::substream(42, 2);
        assert_ne!(
            (0..4).map(|_| c.next_u64()).collect::<Vec<_>>(),
            (0..4).map(|_| d.next_u64()).collect::<Vec<_>>()
        );
    }
}
