//! Analytic gradient of the asymptotic weighted sum rate.
//!
//! Gradients are taken with respect to `conj(B_l)`, so an ascent step is
//! `B_l + u ∇_l`. The chain rule runs through the MSE sensitivity `Ξ`, its
//! per-entry blocks `Δ_mn`, and the induced perturbations `Q → θ → L → ω →
//! D` of the fixed point, assembled into the three traces `Θ₁, Θ₂, Θ₃`.
//!
//! Two readings of the assembly are available:
//!
//! * [`Reading::AsPrinted`] follows the published expressions literally.
//! * [`Reading::Consistent`] weighs `Θ₁` with the inner MSE `E` instead of
//!   `Ω`, counts the `γ`-induced change of `√T` in both `H` and `Hᴴ`, and
//!   applies the Kronecker delta of `Θ₂` on `t = l`. With these, the implicit
//!   `γ` and `ψ` contributions cancel exactly at a fixed point and the
//!   gradient equals [`reduced_gradient`], `log₂e Σ_k Δ_k T_l B_l E_l`.
//!
//! Only the consistent reading agrees with finite differences; it is the
//! default.

use rayon::prelude::*;

use crate::channel::PrecoderSet;
use crate::equivalent::{self, EquivalentChannel};
use crate::error::{Error, Result};
use crate::fixed_point::{FixedPointState, WsrEvaluation};
use crate::linalg::{self, c, CMatrix, C64, LOG2_E};
use crate::model::SystemModel;
use crate::noise::{NoiseBank, NoisePool};

/// Floor applied to `Gᵀγ` before the inverse square root.
pub const LOADING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    AsPrinted,
    #[default]
    Consistent,
}

/// `K_n`, the `n² × n²` permutation with `K vec(A) = vec(Aᵀ)`.
pub fn commutation_matrix(n: usize) -> CMatrix {
    assert!(n >= 1);
    let mut k = CMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            k[(i + j * n, j + i * n)] = c(1.0, 0.0);
        }
    }
    k
}

/// Monte Carlo estimate of
/// `Ξ = −K E[Φ ⊗ (Φᵀ Bᵀ√Tᵀ√T*)] − E[Ψ* ⊗ (Ψ Bᵀ√Tᵀ√T*)]`
/// with `Φ = e eᴴ`, `Ψ = e eᵀ` and `e = d − d̂`.
pub fn xi_matrix(chan: &EquivalentChannel<'_>, pool: &NoisePool) -> CMatrix {
    let n = chan.n_t();
    let nn = n * n;
    let ts = chan.tsqrt();
    let w = chan.precoder().transpose() * ts.transpose() * ts.map(|x| x.conj());
    let partials = equivalent::fold_error_samples(
        chan,
        pool,
        || vec![c(0.0, 0.0); 2 * nn * nn],
        |acc, s| {
            let e = s.error;
            // Φᵀ W and Ψ W, with Φᵀ = e* eᵀ and Ψ = e eᵀ
            let mut ew = vec![c(0.0, 0.0); n];
            for q in 0..n {
                for p in 0..n {
                    ew[q] += e[p] * w[(p, q)];
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let phi = e[a] * e[b].conj();
                    let psi_c = (e[a] * e[b]).conj();
                    for p in 0..n {
                        for q in 0..n {
                            let col = b * n + q;
                            let row = a * n + p;
                            let idx = row + col * nn;
                            acc[idx] += phi * e[p].conj() * ew[q];
                            acc[nn * nn + idx] += psi_c * e[p] * ew[q];
                        }
                    }
                }
            }
        },
    );
    let mut first = vec![c(0.0, 0.0); nn * nn];
    let mut second = vec![c(0.0, 0.0); nn * nn];
    for p in &partials {
        for i in 0..nn * nn {
            first[i] += p[i];
            second[i] += p[nn * nn + i];
        }
    }
    let count = (chan.alphabet().len() * pool.len()) as f64;
    let first = CMatrix::from_column_slice(nn, nn, &first).unscale(count);
    let second = CMatrix::from_column_slice(nn, nn, &second).unscale(count);
    -(commutation_matrix(n) * first) - second
}

/// `Δ_mn`, the `N_t × N_t` block of `Ξ` whose `vec` is column `m + n N_t`.
pub fn delta_block(xi: &CMatrix, n_t: usize, m: usize, n: usize) -> CMatrix {
    let col = m + n * n_t;
    CMatrix::from_fn(n_t, n_t, |i, j| xi[(i + j * n_t, col)])
}

/// Cached quantities for one (group `k`, user `l`) pair.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    pub k: usize,
    pub l: usize,
    pub xi: CMatrix,
    pub inner_mse: CMatrix,
    /// `(I + R_{A_k})⁻¹`.
    pub inv_loading: CMatrix,
    pub commutation: CMatrix,
}

impl GradientWorkspace {
    pub fn new(model: &SystemModel, precoders: &PrecoderSet, state: &FixedPointState, l: usize, noise: &NoiseBank) -> Result<Self> {
        let k = *state.subset.last().expect("non-empty group");
        let user = state
            .user(l)
            .ok_or_else(|| Error::Validation(format!("user {l} is not decoded in group {k}")))?;
        let chan = EquivalentChannel::new(user.tsqrt.clone(), precoders.precoder(l).clone(), model.alphabet(l));
        Ok(Self {
            k,
            l,
            xi: xi_matrix(&chan, noise.pool(l)),
            inner_mse: user.inner_mse.clone(),
            inv_loading: state.inverse_loading()?,
            commutation: commutation_matrix(model.n_t()),
        })
    }
}

/// The three traces for one `(k, t, l, m, n)` index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaTerms {
    pub theta1: C64,
    pub theta2: C64,
    pub theta3: C64,
}

/// Inputs that depend on `(k, l, m, n)` but not on `t`.
struct Perturbation {
    theta: Vec<C64>,
    l_mat: CMatrix,
}

fn perturbation(model: &SystemModel, ws: &GradientWorkspace, b_l: &CMatrix, m: usize, n: usize) -> Perturbation {
    let n_t = model.n_t();
    let stats = model.stats().user(ws.l);
    let delta = delta_block(&ws.xi, n_t, m, n);
    let q = b_l * delta * b_l.adjoint() + b_l * &ws.inner_mse * linalg::unit_matrix(n_t, n_t, n, m);
    let theta = linalg::column_quadratic_forms(stats.u_t(), &q);
    let g = stats.g();
    let loading: Vec<C64> = (0..g.nrows())
        .map(|r| (0..g.ncols()).map(|s| theta[s] * g[(r, s)]).sum())
        .collect();
    let l_mat = linalg::unitary_congruence_c(stats.u_r(), &loading);
    Perturbation { theta, l_mat }
}

fn theta_with(
    model: &SystemModel,
    ws: &GradientWorkspace,
    state: &FixedPointState,
    precoders: &PrecoderSet,
    pert: &Perturbation,
    t: usize,
    m: usize,
    n: usize,
    reading: Reading,
) -> ThetaTerms {
    let n_t = model.n_t();
    let stats = model.stats().user(t);
    let user = state.user(t).expect("t is decoded in the group");
    let g = stats.g();
    let b_t = precoders.precoder(t);
    let sandwich = &ws.inv_loading * &pert.l_mat * &ws.inv_loading;
    let omega_n = linalg::column_quadratic_forms(stats.u_r(), &sandwich);

    let lambda = equivalent::transmit_loading(g, &user.gamma);
    let g_omega: Vec<C64> = (0..g.ncols())
        .map(|s| (0..g.nrows()).map(|r| omega_n[r] * g[(r, s)]).sum())
        .collect();
    let gamma_coeff = match reading {
        Reading::AsPrinted => -0.5,
        Reading::Consistent => -1.0,
    };
    let diag: Vec<C64> = lambda
        .iter()
        .zip(&g_omega)
        .map(|(lam, go)| go * (gamma_coeff / lam.max(LOADING_FLOOR).sqrt()))
        .collect();
    let mut d = linalg::unitary_congruence_c(stats.u_t(), &diag) * b_t;
    if t == ws.l {
        d += user.tsqrt.adjoint() * linalg::unit_matrix(n_t, n_t, m, n);
    }
    let x = match reading {
        Reading::AsPrinted => &user.omega,
        Reading::Consistent => &user.inner_mse,
    };
    let theta1 = linalg::trace(&(x * b_t.adjoint() * user.tsqrt.adjoint() * d));

    let mut theta2 = c(0.0, 0.0);
    for r in 0..g.nrows() {
        for s in 0..g.ncols() {
            theta2 -= omega_n[r] * g[(r, s)] * user.psi[s];
        }
    }
    let delta_index = match reading {
        Reading::AsPrinted => ws.k,
        Reading::Consistent => t,
    };
    if delta_index == ws.l {
        let gl = model.stats().user(ws.l).g();
        for r in 0..gl.nrows() {
            for s in 0..gl.ncols() {
                theta2 += pert.theta[s] * gl[(r, s)] * state.user(ws.l).expect("l in group").gamma[r];
            }
        }
    }
    let theta3 = linalg::trace(&(&ws.inv_loading * &pert.l_mat));
    ThetaTerms { theta1, theta2, theta3 }
}

/// `(Θ₁, Θ₂, Θ₃)` for entry `(m, n)` of `B_l`, decoding-group member `t`.
#[allow(clippy::too_many_arguments)]
pub fn theta_terms(
    model: &SystemModel,
    ws: &GradientWorkspace,
    state: &FixedPointState,
    precoders: &PrecoderSet,
    t: usize,
    m: usize,
    n: usize,
    reading: Reading,
) -> ThetaTerms {
    let pert = perturbation(model, ws, precoders.precoder(ws.l), m, n);
    theta_with(model, ws, state, precoders, &pert, t, m, n, reading)
}

fn converged_groups(eval: &WsrEvaluation) -> Result<()> {
    match eval.groups.iter().flatten().find(|g| !g.state.converged) {
        Some(g) => Err(Error::NotConverged {
            group: g.state.subset.clone(),
            residual: g.state.residual,
        }),
        None => Ok(()),
    }
}

/// `∇_{B_l}` of the asymptotic WSR for every user, via the full chain.
pub fn wsr_gradient(
    model: &SystemModel,
    precoders: &PrecoderSet,
    eval: &WsrEvaluation,
    noise: &NoiseBank,
    reading: Reading,
) -> Result<Vec<CMatrix>> {
    chain_gradient(model, precoders, eval, noise, reading, None)
}

/// `∇_{B_l}` for a single user; cheaper than [`wsr_gradient`] when the
/// users are updated one at a time.
pub fn user_gradient(
    model: &SystemModel,
    precoders: &PrecoderSet,
    eval: &WsrEvaluation,
    noise: &NoiseBank,
    reading: Reading,
    l: usize,
) -> Result<CMatrix> {
    let mut grads = chain_gradient(model, precoders, eval, noise, reading, Some(l))?;
    Ok(grads.swap_remove(l))
}

fn chain_gradient(
    model: &SystemModel,
    precoders: &PrecoderSet,
    eval: &WsrEvaluation,
    noise: &NoiseBank,
    reading: Reading,
    only: Option<usize>,
) -> Result<Vec<CMatrix>> {
    converged_groups(eval)?;
    let n_t = model.n_t();
    let deltas = precoders.deltas();
    let n_users = precoders.len();
    // one workspace per (k, l) with Δ_k ≠ 0 and l ≤ k
    let pairs: Vec<(usize, usize)> = (0..n_users)
        .flat_map(|k| (0..=k).map(move |l| (k, l)))
        .filter(|&(k, l)| eval.group(k).is_some() && only.is_none_or(|u| u == l))
        .collect();
    let contributions: Vec<(usize, CMatrix)> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let state = &eval.group(k).expect("filtered").state;
            let ws = GradientWorkspace::new(model, precoders, state, l, noise)?;
            let mut acc = CMatrix::zeros(n_t, n_t);
            for n in 0..n_t {
                for m in 0..n_t {
                    let pert = perturbation(model, &ws, precoders.precoder(l), m, n);
                    let mut total = c(0.0, 0.0);
                    let mut theta3 = c(0.0, 0.0);
                    for t in l..=k {
                        let th = theta_with(model, &ws, state, precoders, &pert, t, m, n, reading);
                        total += th.theta1 - th.theta2;
                        theta3 = th.theta3;
                    }
                    acc[(m, n)] = (total + theta3) * (LOG2_E * deltas[k]);
                }
            }
            Ok((l, acc))
        })
        .collect::<Result<_>>()?;
    let mut grads = vec![CMatrix::zeros(n_t, n_t); n_users];
    for (l, g) in contributions {
        grads[l] += g;
    }
    // the chain produces ∂f/∂B; the conjugate is ∂f/∂B*
    Ok(grads.into_iter().map(|g| g.map(|z| z.conj())).collect())
}

/// Closed form after the implicit contributions cancel:
/// `∇_l = log₂e Σ_{k ≥ l} Δ_k T_l^{(k)} B_l E_l^{(k)}`.
pub fn reduced_gradient(precoders: &PrecoderSet, eval: &WsrEvaluation) -> Result<Vec<CMatrix>> {
    converged_groups(eval)?;
    let n_t = precoders.n_t();
    let deltas = precoders.deltas();
    let mut grads = vec![CMatrix::zeros(n_t, n_t); precoders.len()];
    for (k, group) in eval.groups.iter().enumerate() {
        let Some(group) = group else { continue };
        for user in &group.state.users {
            grads[user.user] += (&user.t * precoders.precoder(user.user) * &user.inner_mse) * c(LOG2_E * deltas[k], 0.0);
        }
    }
    Ok(grads)
}
