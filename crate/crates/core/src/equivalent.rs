//! The per-user virtual Gaussian channel `z = √T B d + v`.
//!
//! Expectations over the noise use a frozen [`NoisePool`]; expectations over
//! the transmitted vector enumerate the alphabet exactly. The posterior over
//! the alphabet is always formed with log-sum-exp and max subtraction, since
//! the exponents reach `−‖·‖² ≈ −10³` at high SNR.

use rayon::prelude::*;

use crate::constellation::VectorAlphabet;
use crate::linalg::{self, c, CMatrix, RMatrix, C64, LOG2_E};
use crate::noise::NoisePool;

/// `T = U_T diag(Gᵀγ) U_Tᴴ`.
pub fn t_matrix(u_t: &CMatrix, g: &RMatrix, gamma: &[f64]) -> CMatrix {
    linalg::unitary_congruence(u_t, &transmit_loading(g, gamma))
}

/// `√T = U_T diag(√(Gᵀγ)) U_Tᴴ`.
pub fn sqrt_t(u_t: &CMatrix, g: &RMatrix, gamma: &[f64]) -> CMatrix {
    let root: Vec<f64> = transmit_loading(g, gamma).iter().map(|x| x.sqrt()).collect();
    linalg::unitary_congruence(u_t, &root)
}

/// `Gᵀγ`, clamped at zero.
pub fn transmit_loading(g: &RMatrix, gamma: &[f64]) -> Vec<f64> {
    assert_eq!(g.nrows(), gamma.len(), "γ must have one entry per receive direction");
    (0..g.ncols())
        .map(|m| {
            let s: f64 = (0..g.nrows()).map(|n| g[(n, m)] * gamma[n]).sum();
            s.max(0.0)
        })
        .collect()
}

/// Deterministic virtual channel with its noiseless constellation image
/// `s_j = √T B a_j` precomputed.
#[derive(Debug, Clone)]
pub struct EquivalentChannel<'a> {
    tsqrt: CMatrix,
    b: CMatrix,
    alphabet: &'a VectorAlphabet,
    effective: Vec<C64>,
}

impl<'a> EquivalentChannel<'a> {
    pub fn new(tsqrt: CMatrix, b: CMatrix, alphabet: &'a VectorAlphabet) -> Self {
        let n_t = alphabet.n_t();
        assert_eq!(tsqrt.nrows(), n_t);
        assert_eq!(b.nrows(), n_t);
        let gain = &tsqrt * &b;
        let mut effective = Vec::with_capacity(alphabet.len() * n_t);
        for a in alphabet.iter() {
            for i in 0..n_t {
                let mut acc = c(0.0, 0.0);
                for (j, aj) in a.iter().enumerate() {
                    acc += gain[(i, j)] * aj;
                }
                effective.push(acc);
            }
        }
        Self { tsqrt, b, alphabet, effective }
    }

    /// Channel with `√T = I` and the given effective gain.
    pub fn with_gain(gain: CMatrix, alphabet: &'a VectorAlphabet) -> Self {
        let n = gain.nrows();
        Self::new(CMatrix::identity(n, n), gain, alphabet)
    }

    pub fn tsqrt(&self) -> &CMatrix {
        &self.tsqrt
    }

    pub fn precoder(&self) -> &CMatrix {
        &self.b
    }

    pub fn alphabet(&self) -> &VectorAlphabet {
        self.alphabet
    }

    pub fn n_t(&self) -> usize {
        self.alphabet.n_t()
    }

    pub fn image(&self, j: usize) -> &[C64] {
        let n = self.n_t();
        &self.effective[j * n..(j + 1) * n]
    }
}

/// Fills `weights` with the alphabet posterior given `z` and returns
/// `ln Σ_p exp(−‖z − s_p‖²)`.
fn posterior(z: &[C64], effective: &[C64], weights: &mut [f64]) -> f64 {
    let n = z.len();
    let mut best = f64::NEG_INFINITY;
    for (w, s) in weights.iter_mut().zip(effective.chunks_exact(n)) {
        let mut d = 0.0;
        for i in 0..n {
            d += (z[i] - s[i]).norm_sqr();
        }
        *w = -d;
        best = best.max(-d);
    }
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - best).exp();
        total += *w;
    }
    let inv = 1.0 / total;
    for w in weights.iter_mut() {
        *w *= inv;
    }
    best + total.ln()
}

/// Posterior mean `E[d | z]` over the channel's alphabet.
pub fn mmse_estimate(z: &[C64], chan: &EquivalentChannel<'_>) -> Vec<C64> {
    let mut weights = vec![0.0; chan.alphabet.len()];
    posterior(z, &chan.effective, &mut weights);
    weighted_mean(chan.alphabet, &weights)
}

fn weighted_mean(alphabet: &VectorAlphabet, weights: &[f64]) -> Vec<C64> {
    let mut mean = vec![c(0.0, 0.0); alphabet.n_t()];
    for (w, a) in weights.iter().zip(alphabet.iter()) {
        for (acc, ai) in mean.iter_mut().zip(a) {
            *acc += ai * *w;
        }
    }
    mean
}

/// One Monte Carlo draw: transmitted index `m`, noise `v`, observation
/// `z = s_m + v`, log-evidence and posterior mean.
pub struct ErrorSample<'s> {
    pub transmitted: &'s [C64],
    pub noise: &'s [C64],
    /// `d − d̂`.
    pub error: &'s [C64],
    /// `ln Σ_p exp(−(‖s_m − s_p + v‖² − ‖v‖²))`.
    pub log_evidence: f64,
}

/// Runs `fold` over every (alphabet vector, noise sample) pair. Work is split
/// by transmitted vector and the per-vector partials are returned in
/// alphabet order, so any reduction over them is thread-count independent.
pub fn fold_error_samples<T, I, F>(
    chan: &EquivalentChannel<'_>,
    pool: &NoisePool,
    init: I,
    fold: F,
) -> Vec<T>
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, &ErrorSample<'_>) + Sync,
{
    let n = chan.n_t();
    assert_eq!(pool.dim(), n, "noise pool dimension must match the antenna count");
    let m_size = chan.alphabet.len();
    (0..m_size)
        .into_par_iter()
        .map(|m| {
            let mut acc = init();
            let mut weights = vec![0.0; m_size];
            let mut z = vec![c(0.0, 0.0); n];
            let mut err = vec![c(0.0, 0.0); n];
            let s_m = chan.image(m);
            let a_m = chan.alphabet.vector(m);
            for v in pool.iter() {
                let mut vnorm = 0.0;
                for i in 0..n {
                    z[i] = s_m[i] + v[i];
                    vnorm += v[i].norm_sqr();
                }
                let log_z = posterior(&z, &chan.effective, &mut weights);
                err.copy_from_slice(a_m);
                for (w, a) in weights.iter().zip(chan.alphabet.iter()) {
                    for i in 0..n {
                        err[i] -= a[i] * *w;
                    }
                }
                let sample = ErrorSample {
                    transmitted: a_m,
                    noise: v,
                    error: &err,
                    log_evidence: log_z + vnorm,
                };
                fold(&mut acc, &sample);
            }
            acc
        })
        .collect()
}

/// Error covariance of the MMSE estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseResult {
    /// `E[(d − d̂)(d − d̂)ᴴ]`.
    pub inner_mse: CMatrix,
    /// `B · inner_mse · Bᴴ`.
    pub omega: CMatrix,
    pub samples: usize,
    pub seed: u64,
}

/// Mutual information and MSE from one pass over the noise pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAnalysis {
    pub mi_bits: f64,
    pub mmse: MmseResult,
}

#[derive(Default)]
struct Partial {
    evidence: f64,
    outer: Vec<C64>,
}

fn run_analysis(chan: &EquivalentChannel<'_>, pool: &NoisePool, want_mse: bool) -> (f64, Option<CMatrix>) {
    let n = chan.n_t();
    let partials = fold_error_samples(
        chan,
        pool,
        || Partial {
            evidence: 0.0,
            outer: if want_mse { vec![c(0.0, 0.0); n * n] } else { Vec::new() },
        },
        |acc, s| {
            acc.evidence += s.log_evidence;
            if want_mse {
                // column-major accumulation of e eᴴ
                for j in 0..n {
                    let ej = s.error[j].conj();
                    for i in 0..n {
                        acc.outer[i + j * n] += s.error[i] * ej;
                    }
                }
            }
        },
    );
    let count = (chan.alphabet.len() * pool.len()) as f64;
    let mut evidence = 0.0;
    let mut outer = vec![c(0.0, 0.0); if want_mse { n * n } else { 0 }];
    for p in &partials {
        evidence += p.evidence;
        for (o, x) in outer.iter_mut().zip(&p.outer) {
            *o += x;
        }
    }
    let log_m = chan.alphabet.log2_size();
    let mi = (log_m - LOG2_E * evidence / count).clamp(0.0, log_m);
    let mse = want_mse.then(|| {
        let m = CMatrix::from_column_slice(n, n, &outer).unscale(count);
        linalg::hermitian_part(&m)
    });
    (mi, mse)
}

fn wrap_mse(chan: &EquivalentChannel<'_>, pool: &NoisePool, inner: CMatrix) -> MmseResult {
    let omega = linalg::hermitian_part(&(&chan.b * &inner * chan.b.adjoint()));
    MmseResult {
        inner_mse: inner,
        omega,
        samples: pool.len(),
        seed: pool.seed(),
    }
}

/// MSE matrices averaged over the full alphabet and the noise pool.
pub fn mse_matrix(chan: &EquivalentChannel<'_>, pool: &NoisePool) -> MmseResult {
    let (_, inner) = run_analysis(chan, pool, true);
    wrap_mse(chan, pool, inner.expect("requested"))
}

/// Finite-alphabet mutual information in bits,
/// `log₂M − (1/M) Σ_m E_v[log₂ Σ_p exp(−(‖s_m − s_p + v‖² − ‖v‖²))]`,
/// clamped to `[0, log₂M]`.
pub fn finite_alphabet_mi(chan: &EquivalentChannel<'_>, pool: &NoisePool) -> f64 {
    run_analysis(chan, pool, false).0
}

pub fn analyze(chan: &EquivalentChannel<'_>, pool: &NoisePool) -> ChannelAnalysis {
    let (mi_bits, inner) = run_analysis(chan, pool, true);
    ChannelAnalysis {
        mi_bits,
        mmse: wrap_mse(chan, pool, inner.expect("requested")),
    }
}
