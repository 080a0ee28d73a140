#![allow(dead_code)]

use macprecode::channel::{two_user_example, ChannelStatistics, PrecoderSet};
use macprecode::constellation::{build_constellation, ConstellationKind};
use macprecode::fixed_point::{wsr_objective, FixedPointOptions};
use macprecode::linalg::{c, frobenius_sq, CMatrix};
use macprecode::model::SystemModel;
use macprecode::noise::{complex_gaussian, NoiseBank, SimRng};

/// The bundled two-user statistics with exactly unitary eigenbases.
pub fn example_stats() -> ChannelStatistics {
    two_user_example().reorthonormalized().unwrap()
}

pub fn example_model(kind: ConstellationKind, q: usize) -> SystemModel {
    SystemModel::uniform(example_stats(), build_constellation(kind, q).unwrap()).unwrap()
}

/// First `k` users of the example.
pub fn example_model_k(kind: ConstellationKind, q: usize, k: usize) -> SystemModel {
    let stats = example_stats();
    let users = stats.users()[..k].to_vec();
    SystemModel::uniform(ChannelStatistics::new(users).unwrap(), build_constellation(kind, q).unwrap()).unwrap()
}

pub fn random_precoder(rng: &mut SimRng, n_t: usize, power: f64) -> CMatrix {
    let b = CMatrix::from_fn(n_t, n_t, |_, _| complex_gaussian(rng));
    let s = (power / frobenius_sq(&b)).sqrt();
    b * c(s, 0.0)
}

pub fn rel_frobenius(a: &[CMatrix], reference: &[CMatrix]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| frobenius_sq(&(x - y))).sum();
    let den: f64 = reference.iter().map(frobenius_sq).sum();
    (num / den).sqrt()
}

/// Central differences of the WSR, `½(∂/∂Re + j ∂/∂Im)` per entry, with
/// the noise bank held fixed and the fixed point re-solved (warm started
/// from the base point) at every perturbation.
pub fn fd_gradient(
    model: &SystemModel,
    set: &PrecoderSet,
    noise: &NoiseBank,
    opts: &FixedPointOptions,
    h: f64,
) -> Vec<CMatrix> {
    let base = wsr_objective(model, set, noise, opts, None).unwrap();
    let n_t = model.n_t();
    // doubled budgets leave room for the perturbations
    let powers: Vec<f64> = set.powers().iter().map(|p| p * 2.0).collect();
    (0..set.len())
        .map(|l| {
            CMatrix::from_fn(n_t, n_t, |m, n| {
                let mut part = [0.0; 2];
                for (idx, dir) in [c(1.0, 0.0), c(0.0, 1.0)].into_iter().enumerate() {
                    let mut vals = [0.0; 2];
                    for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                        let mut b = set.precoder(l).clone();
                        b[(m, n)] += dir * (sign * h);
                        let mut ps = set.precoders().to_vec();
                        ps[l] = b;
                        let p = PrecoderSet::new(ps, powers.clone(), set.weights().to_vec()).unwrap();
                        let ev = wsr_objective(model, &p, noise, opts, Some(&base)).unwrap();
                        assert!(ev.converged(), "perturbed fixed point did not converge");
                        vals[s] = ev.value;
                    }
                    part[idx] = (vals[0] - vals[1]) / (2.0 * h);
                }
                c(0.5 * part[0], 0.5 * part[1])
            })
        })
        .collect()
}

/// `E[f(x)]` for `x ~ N(0, var)` by the trapezoid rule on ±10σ.
pub fn gauss_expect(var: f64, f: impl Fn(f64) -> f64) -> f64 {
    let sigma = var.sqrt();
    let n = 8000;
    let (lo, hi) = (-10.0 * sigma, 10.0 * sigma);
    let dx = (hi - lo) / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    (0..=n)
        .map(|i| {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * f(x) * norm * (-x * x / (2.0 * var)).exp()
        })
        .sum::<f64>()
        * dx
}

/// Scalar BPSK `z = a d + v`, `v ~ CN(0, 1)`, real `a ≥ 0`: mutual
/// information in bits, by quadrature over the in-phase noise.
pub fn bpsk_mi_quadrature(a: f64) -> f64 {
    1.0 - gauss_expect(0.5, |x| {
        let t = -4.0 * a * (a + x);
        // log2(1 + e^t) without overflow
        (t.max(0.0) + (-t.abs()).exp().ln_1p()) / std::f64::consts::LN_2
    })
}

/// Scalar BPSK MMSE `1 − E[tanh(2a(a + x))]`, `x ~ N(0, ½)`.
pub fn bpsk_mse_quadrature(a: f64) -> f64 {
    1.0 - gauss_expect(0.5, |x| (2.0 * a * (a + x)).tanh())
}

/// Scalar QPSK splits into two BPSK components of amplitude `a/√2`.
pub fn qpsk_mi_quadrature(a: f64) -> f64 {
    2.0 * bpsk_mi_quadrature(a * std::f64::consts::FRAC_1_SQRT_2)
}
