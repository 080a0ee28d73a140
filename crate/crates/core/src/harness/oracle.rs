//! Monte Carlo estimate of the exact conditional mutual information
//! `I(d_A; y | d_{A^c})` over channel realisations, by brute-force
//! enumeration of the joint alphabet of the group.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{ChannelStatistics, PrecoderSet};
use crate::constellation::VectorAlphabet;
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, C64, LOG2_E};
use crate::model::SystemModel;
use crate::noise::{complex_gaussian, derive_seed, rng_from_seed};

/// Supplies channel realisations `H_k`; draw `i` must be a pure function of
/// `(k, seed)`.
pub trait ChannelSource: Sync {
    fn n_users(&self) -> usize;
    fn n_r(&self) -> usize;
    fn n_t(&self) -> usize;
    fn draw(&self, k: usize, seed: u64) -> CMatrix;
}

impl ChannelSource for ChannelStatistics {
    fn n_users(&self) -> usize {
        ChannelStatistics::n_users(self)
    }

    fn n_r(&self) -> usize {
        ChannelStatistics::n_r(self)
    }

    fn n_t(&self) -> usize {
        ChannelStatistics::n_t(self)
    }

    fn draw(&self, k: usize, seed: u64) -> CMatrix {
        self.sample_channel(k, seed)
    }
}

/// The same channel matrices at every draw.
#[derive(Debug, Clone)]
pub struct FixedChannels(pub Vec<CMatrix>);

impl ChannelSource for FixedChannels {
    fn n_users(&self) -> usize {
        self.0.len()
    }

    fn n_r(&self) -> usize {
        self.0[0].nrows()
    }

    fn n_t(&self) -> usize {
        self.0[0].ncols()
    }

    fn draw(&self, k: usize, _seed: u64) -> CMatrix {
        self.0[k].clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub bits: f64,
    /// Standard error from the spread of the per-channel estimates.
    pub std_error: f64,
    pub n_channels: usize,
    pub n_noise: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub n_channels: usize,
    pub n_noise: usize,
    pub seed: u64,
    pub alphabet_cap: usize,
}

/// Received points `Σ_{t∈A} H_t B_t x_t` for every joint index, user
/// `subset[0]` varying fastest.
fn joint_images(effective: &[CMatrix], alphabets: &[&VectorAlphabet]) -> Vec<Vec<C64>> {
    let per_user: Vec<Vec<Vec<C64>>> = effective
        .iter()
        .zip(alphabets)
        .map(|(hb, a)| {
            a.iter()
                .map(|x| {
                    let x = CMatrix::from_column_slice(x.len(), 1, x);
                    (hb * x).column(0).iter().copied().collect()
                })
                .collect()
        })
        .collect();
    let total: usize = alphabets.iter().map(|a| a.len()).product();
    let n_r = effective[0].nrows();
    (0..total)
        .map(|mut j| {
            let mut s = vec![c(0.0, 0.0); n_r];
            for imgs in &per_user {
                let img = &imgs[j % imgs.len()];
                j /= imgs.len();
                for (a, b) in s.iter_mut().zip(img) {
                    *a += b;
                }
            }
            s
        })
        .collect()
}

/// `log Σ_p exp(−‖s_m − s_p + n‖² + ‖n‖²)` in nats; with `m` the
/// transmitted index the sum includes `p = m` so it is at least 0.
fn log_evidence(points: &[Vec<C64>], m: usize, noise: &[C64]) -> f64 {
    let sm = &points[m];
    let nn: f64 = noise.iter().map(|v| v.norm_sqr()).sum();
    let exps: Vec<f64> = points
        .iter()
        .map(|sp| {
            let d: f64 = sm.iter().zip(sp).zip(noise).map(|((a, b), v)| (a - b + v).norm_sqr()).sum();
            nn - d
        })
        .collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln()
}

/// Estimates `I(d_A; y | d_{A^c})` in bits for `y = Σ_k H_k B_k d_k + n`,
/// `n ~ CN(0, I)`.
///
/// For every channel draw, `n_noise` pairs of a uniformly drawn joint
/// symbol and a noise vector are averaged; the estimate is
/// `log₂|A| − E[log₂ Σ_p exp(−‖s_m − s_p + n‖² + ‖n‖²)]`. Channel `i` uses
/// stream `derive_seed(seed, i)`, so results do not depend on the thread
/// count.
pub fn mc_exact_mi<S: ChannelSource + ?Sized>(
    source: &S,
    model: &SystemModel,
    precoders: &PrecoderSet,
    subset: &[usize],
    opts: &OracleOptions,
) -> Result<OracleEstimate> {
    if subset.is_empty() {
        return Err(Error::Validation("decoding group must not be empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&k| k >= source.n_users() || k >= precoders.len()) {
        return Err(Error::Validation(format!("user {bad} is not part of the model")));
    }
    if opts.n_channels == 0 || opts.n_noise == 0 {
        return Err(Error::Validation("oracle sample counts must be at least 1".into()));
    }
    let size: u128 = subset.iter().map(|&k| model.alphabet(k).len() as u128).product();
    if size > opts.alphabet_cap as u128 {
        return Err(Error::Size {
            what: format!("joint alphabet of group {subset:?} (use fewer users, antennas or points)"),
            size,
            cap: opts.alphabet_cap as u128,
        });
    }
    let alphabets: Vec<&VectorAlphabet> = subset.iter().map(|&k| model.alphabet(k)).collect();
    let log_m: f64 = alphabets.iter().map(|a| a.log2_size()).sum();
    let n_r = source.n_r();
    let per_channel: Vec<f64> = (0..opts.n_channels)
        .into_par_iter()
        .map(|i| {
            let stream = derive_seed(opts.seed, i as u64);
            let effective: Vec<CMatrix> = subset
                .iter()
                .map(|&k| source.draw(k, derive_seed(stream, k as u64)) * precoders.precoder(k))
                .collect();
            let points = joint_images(&effective, &alphabets);
            let mut rng = rng_from_seed(derive_seed(stream, u64::MAX));
            let mut noise = vec![c(0.0, 0.0); n_r];
            let mut acc = 0.0;
            for _ in 0..opts.n_noise {
                let m = rng.random_range(0..points.len());
                for v in noise.iter_mut() {
                    *v = complex_gaussian(&mut rng);
                }
                acc += log_evidence(&points, m, &noise);
            }
            log_m - LOG2_E * acc / opts.n_noise as f64
        })
        .collect();
    let n = per_channel.len() as f64;
    let mean = per_channel.iter().sum::<f64>() / n;
    let var = if per_channel.len() > 1 {
        per_channel.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(OracleEstimate {
        bits: mean,
        std_error: (var / n).sqrt(),
        n_channels: opts.n_channels,
        n_noise: opts.n_noise,
    })
}

/// `Σ_k Δ_k I(d_{A_k}; y | d_{A_k^c})` with the nested groups of the
/// decoding order; standard errors are combined as if independent.
pub fn mc_exact_wsr<S: ChannelSource + ?Sized>(
    source: &S,
    model: &SystemModel,
    precoders: &PrecoderSet,
    opts: &OracleOptions,
) -> Result<OracleEstimate> {
    let mut bits = 0.0;
    let mut var = 0.0;
    for (k, &delta) in precoders.deltas().iter().enumerate() {
        if delta == 0.0 {
            continue;
        }
        let subset: Vec<usize> = (0..=k).collect();
        let est = mc_exact_mi(source, model, precoders, &subset, opts)?;
        bits += delta * est.bits;
        var += (delta * est.std_error).powi(2);
    }
    Ok(OracleEstimate {
        bits,
        std_error: var.sqrt(),
        n_channels: opts.n_channels,
        n_noise: opts.n_noise,
    })
}
