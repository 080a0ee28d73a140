//! Seeded randomness: stream derivation, circular complex Gaussians and the
//! frozen noise pools used as common random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, C64};

pub type SimRng = ChaCha8Rng;

/// Mixes a base seed with a stream index (splitmix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circularly symmetric complex Gaussian with unit total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// `n` i.i.d. noise vectors of length `dim`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePool {
    dim: usize,
    seed: u64,
    data: Vec<C64>,
}

impl NoisePool {
    pub fn new(dim: usize, n: usize, seed: u64) -> Self {
        assert!(n >= 1, "noise pool needs at least one sample");
        let mut rng = rng_from_seed(seed);
        let data = (0..dim * n).map(|_| complex_gaussian(&mut rng)).collect();
        Self { dim, seed, data }
    }

    /// A pool holding the given samples verbatim.
    pub fn from_samples(dim: usize, data: Vec<C64>) -> Self {
        assert!(dim > 0 && !data.is_empty() && data.len() % dim == 0);
        Self { dim, seed: 0, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// One frozen pool per user; the Monte Carlo objective is a deterministic
/// function of the precoders for as long as the bank is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    seed: u64,
    pools: Vec<NoisePool>,
}

impl NoiseBank {
    pub fn new(n_users: usize, dim: usize, n: usize, seed: u64) -> Self {
        let pools = (0..n_users)
            .map(|k| NoisePool::new(dim, n, derive_seed(seed, k as u64)))
            .collect();
        Self { seed, pools }
    }

    pub fn from_pools(pools: Vec<NoisePool>) -> Self {
        Self { seed: 0, pools }
    }

    pub fn pool(&self, user: usize) -> &NoisePool {
        &self.pools[user]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples_per_user(&self) -> usize {
        self.pools.first().map_or(0, NoisePool::len)
    }
}
