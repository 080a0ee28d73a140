//! Large-system fixed point for a decoding group and the resulting
//! asymptotic conditional mutual information and weighted sum rate.
//!
//! For every user `t` of a group `A` the pair `(γ_t, ψ_t)` must satisfy
//!
//! ```text
//! γ_{t,n} = u_{R,t,n}ᴴ (I + R_A)⁻¹ u_{R,t,n}
//! ψ_{t,m} = u_{T,t,m}ᴴ Ω_t u_{T,t,m}
//! ```
//!
//! with `T_t = U_T diag(G_tᵀγ_t) U_Tᴴ`, `R_t = U_R diag(G_t ψ_t) U_Rᴴ`,
//! `R_A = Σ_t R_t` and `Ω_t` the MSE matrix of the virtual channel
//! `z = √T_t B_t d + v`. One sweep updates `γ` from `ψ` and then `ψ` from
//! the new `γ`; sweeps are damped and Anderson-accelerated, starting from
//! `ψ = 0` (`T_t = R_{t,t}`, `R_A = 0`) unless warm started, with an
//! adaptively over-relaxed fallback for slow cases. The residual of a sweep is
//! the largest relative change of `ψ` or of the `γ` it implies.

use std::collections::VecDeque;

use log::debug;

use crate::channel::PrecoderSet;
use crate::equivalent::{self, EquivalentChannel};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, LOG2_E};
use crate::model::SystemModel;
use crate::noise::NoiseBank;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    /// Largest admissible relative change of any `γ` or `ψ` entry.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate, `x ← (1 − d) x + d F(x)`.
    pub damping: f64,
    /// Number of previous steps used for Anderson extrapolation; 0 gives
    /// the plain damped iteration.
    pub anderson_depth: usize,
    /// Sweeps after which adaptively relaxed steps replace the
    /// accelerated iteration.
    pub relax_after: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            damping: 0.5,
            anderson_depth: 3,
            relax_after: 25,
        }
    }
}

/// Quantities of one user inside a group at the fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user: usize,
    pub gamma: Vec<f64>,
    pub psi: Vec<f64>,
    pub t: CMatrix,
    pub tsqrt: CMatrix,
    pub r: CMatrix,
    /// MSE of the virtual channel, `E[(d − d̂)(d − d̂)ᴴ]`.
    pub inner_mse: CMatrix,
    pub omega: CMatrix,
    /// Mutual information of the virtual channel in bits.
    pub mi_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointState {
    pub subset: Vec<usize>,
    pub users: Vec<UserState>,
    /// `R_A = Σ_t R_t`.
    pub r_sum: CMatrix,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warm_started: bool,
    /// `N_t / N_r`, informational.
    pub beta: f64,
}

impl FixedPointState {
    pub fn user(&self, user: usize) -> Option<&UserState> {
        self.users.iter().find(|u| u.user == user)
    }

    /// `(I + R_A)⁻¹`.
    pub fn inverse_loading(&self) -> Result<CMatrix> {
        let n = self.r_sum.nrows();
        linalg::inverse_hpd(&(CMatrix::identity(n, n) + &self.r_sum))
    }
}

const REL_FLOOR: f64 = 1e-12;

/// Entrywise relative change; entries far below the largest one are
/// measured against it instead, so vanishing directions do not dominate.
fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let scale = new.iter().chain(old).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-8 * scale).max(REL_FLOOR);
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `R_t = U_R diag(G_t ψ_t) U_Rᴴ` for every member and their sum.
fn receive_side(model: &SystemModel, subset: &[usize], psi: &[Vec<f64>]) -> (Vec<CMatrix>, CMatrix) {
    let n_r = model.n_r();
    let mut r_sum = CMatrix::zeros(n_r, n_r);
    let rs = subset
        .iter()
        .zip(psi)
        .map(|(&k, psi)| {
            let stats = model.stats().user(k);
            let loading: Vec<f64> = (0..n_r)
                .map(|n| (0..psi.len()).map(|m| stats.g()[(n, m)] * psi[m]).sum::<f64>().max(0.0))
                .collect();
            let r = linalg::unitary_congruence(stats.u_r(), &loading);
            r_sum += &r;
            r
        })
        .collect();
    (rs, r_sum)
}

/// `γ_{t,n} = u_{R,t,n}ᴴ (I + R_A)⁻¹ u_{R,t,n}`.
fn gamma_map(model: &SystemModel, subset: &[usize], r_sum: &CMatrix) -> Result<Vec<Vec<f64>>> {
    let n_r = r_sum.nrows();
    let inv = linalg::inverse_hpd(&(CMatrix::identity(n_r, n_r) + r_sum))?;
    Ok(subset
        .iter()
        .map(|&k| {
            linalg::column_quadratic_forms(model.stats().user(k).u_r(), &inv)
                .iter()
                .map(|z| z.re.max(0.0))
                .collect()
        })
        .collect())
}

/// Virtual-channel quantities at `γ`, with the undamped `ψ` update.
fn transmit_side(
    model: &SystemModel,
    precoders: &PrecoderSet,
    subset: &[usize],
    noise: &NoiseBank,
    gamma: &[Vec<f64>],
) -> Vec<(UserState, Vec<f64>)> {
    subset
        .iter()
        .zip(gamma)
        .map(|(&k, gamma)| {
            let stats = model.stats().user(k);
            let t = equivalent::t_matrix(stats.u_t(), stats.g(), gamma);
            let tsqrt = equivalent::sqrt_t(stats.u_t(), stats.g(), gamma);
            let chan = EquivalentChannel::new(tsqrt.clone(), precoders.precoder(k).clone(), model.alphabet(k));
            let analysis = equivalent::analyze(&chan, noise.pool(k));
            let psi_hat = linalg::column_quadratic_forms(stats.u_t(), &analysis.mmse.omega)
                .iter()
                .map(|z| z.re.max(0.0))
                .collect();
            let n_r = model.n_r();
            let user = UserState {
                user: k,
                gamma: gamma.clone(),
                psi: Vec::new(),
                t,
                tsqrt,
                r: CMatrix::zeros(n_r, n_r),
                inner_mse: analysis.mmse.inner_mse,
                omega: analysis.mmse.omega,
                mi_bits: analysis.mi_bits,
            };
            (user, psi_hat)
        })
        .collect()
}

/// One undamped sweep from `ψ`: returns `(γ̂, ψ̂)` with `γ̂ = Γ(ψ)` and
/// `ψ̂ = Ψ(γ̂)`. A fixed point satisfies `ψ̂ = ψ`.
pub fn sweep(
    model: &SystemModel,
    precoders: &PrecoderSet,
    subset: &[usize],
    noise: &NoiseBank,
    psi: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (_, r_sum) = receive_side(model, subset, psi);
    let gamma_hat = gamma_map(model, subset, &r_sum)?;
    let psi_hat = transmit_side(model, precoders, subset, noise, &gamma_hat)
        .into_iter()
        .map(|(_, ph)| ph)
        .collect();
    Ok((gamma_hat, psi_hat))
}

/// Output of one sweep from a given `ψ`.
#[derive(Clone)]
struct Sweep {
    /// Flattened `ψ` the sweep started from.
    x: Vec<f64>,
    /// Flattened `ψ̂ − ψ`.
    f: Vec<f64>,
    residual: f64,
    users: Vec<(UserState, Vec<f64>)>,
}

impl Sweep {
    fn norm(&self) -> f64 {
        self.f.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn image(&self) -> Vec<f64> {
        self.x.iter().zip(&self.f).map(|(x, f)| x + f).collect()
    }
}

fn unflatten(x: &[f64], n_users: usize) -> Vec<Vec<f64>> {
    let per = x.len() / n_users;
    x.chunks(per).map(|c| c.iter().map(|v| v.max(0.0)).collect()).collect()
}

/// Runs sweeps, counting every Monte Carlo pass and remembering the sweep
/// with the smallest residual.
struct Evaluator<'a> {
    model: &'a SystemModel,
    precoders: &'a PrecoderSet,
    subset: &'a [usize],
    noise: &'a NoiseBank,
    count: usize,
    best: Option<Sweep>,
}

impl Evaluator<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<Sweep> {
        self.count += 1;
        let psi = unflatten(x, self.subset.len());
        let x: Vec<f64> = psi.iter().flatten().copied().collect();
        let (_, r_sum) = receive_side(self.model, self.subset, &psi);
        let gamma_hat = gamma_map(self.model, self.subset, &r_sum)?;
        let users = transmit_side(self.model, self.precoders, self.subset, self.noise, &gamma_hat);
        let psi_hat: Vec<Vec<f64>> = users.iter().map(|(_, ph)| ph.clone()).collect();
        // (γ̂, ψ̂) satisfies the ψ-equation exactly; the residual combines its
        // γ-equation error with the change in ψ
        let (_, r_hat) = receive_side(self.model, self.subset, &psi_hat);
        let gamma_check = gamma_map(self.model, self.subset, &r_hat)?;
        let mut residual = 0.0f64;
        for ((g, gc), (p, ph)) in gamma_hat.iter().zip(&gamma_check).zip(psi.iter().zip(&psi_hat)) {
            residual = residual.max(rel_change(gc, g)).max(rel_change(ph, p));
        }
        if !residual.is_finite() {
            residual = f64::INFINITY;
        }
        let f = psi_hat.iter().flatten().zip(&x).map(|(a, b)| a - b).collect();
        let sweep = Sweep { x, f, residual, users };
        if self.best.as_ref().is_none_or(|b| sweep.residual < b.residual) {
            self.best = Some(sweep.clone());
        }
        Ok(sweep)
    }

    fn done(&self, opts: &FixedPointOptions) -> bool {
        self.count >= opts.max_iter || self.best.as_ref().is_some_and(|b| b.residual <= opts.tol)
    }
}

/// Solves the self-consistent equations for the decoding group `subset`.
///
/// Damped, Anderson-accelerated sweeps run first. If they have not met the
/// tolerance after `relax_after` sweeps, an over-relaxed iteration takes
/// over whose step grows while the update direction persists; this gets
/// through regions where the map nearly touches the identity without
/// crossing it, which trap secant-type methods. Every sweep counts towards
/// `max_iter`.
///
/// The returned state is the output of the sweep with the smallest residual,
/// so `T`, `E`, `Ω` and the virtual-channel MI are exactly those at its `γ`.
/// A state that fails to converge is returned with `converged == false`.
pub fn solve_fixed_point(
    model: &SystemModel,
    precoders: &PrecoderSet,
    subset: &[usize],
    noise: &NoiseBank,
    opts: &FixedPointOptions,
    warm_start: Option<&FixedPointState>,
) -> Result<FixedPointState> {
    if subset.is_empty() {
        return Err(Error::Validation("decoding group must not be empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&k| k >= model.n_users()) {
        return Err(Error::Validation(format!("user {bad} is not part of the model")));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    if opts.max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let warm_started = warm_start.is_some_and(|w| w.subset == subset);
    let x0: Vec<f64> = match warm_start {
        Some(w) if warm_started => w.users.iter().flat_map(|u| u.psi.iter().copied()).collect(),
        _ => vec![0.0; subset.len() * model.n_t()],
    };
    let mut ev = Evaluator {
        model,
        precoders,
        subset,
        noise,
        count: 0,
        best: None,
    };
    let mut mixer = Mixer::new(opts.damping, opts.anderson_depth);
    let mut cur = ev.eval(&x0)?;
    let mut relax = opts.damping;
    let mut prev_f: Option<Vec<f64>> = None;
    while !ev.done(opts) {
        let next = if ev.count >= opts.relax_after {
            // Fixed-point directions that persist mark a bottleneck the
            // iteration crawls through: lengthen the step while they do,
            // shorten it once the direction turns.
            if let Some(pf) = &prev_f {
                let dot: f64 = pf.iter().zip(&cur.f).map(|(a, b)| a * b).sum();
                let np = pf.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = dot / (np * cur.norm()).max(f64::MIN_POSITIVE);
                relax = if cos > 0.8 { (relax * 1.5).min(64.0) } else { (relax * 0.5).max(opts.damping * 0.5) };
            }
            prev_f = Some(cur.f.clone());
            cur.x.iter().zip(&cur.f).map(|(x, f)| x + relax * f).collect()
        } else {
            mixer.step(cur.x.clone(), cur.image())
        };
        cur = ev.eval(&next)?;
    }
    let iterations = ev.count;
    let best = ev.best.expect("evaluated at least once");
    let converged = best.residual <= opts.tol;
    if !converged {
        debug!(
            "fixed point for {subset:?} stopped at residual {:.3e} after {iterations} sweeps",
            best.residual
        );
    }
    let psi_hat: Vec<Vec<f64>> = best.users.iter().map(|(_, ph)| ph.clone()).collect();
    let (rs, r_sum) = receive_side(model, subset, &psi_hat);
    let users = best
        .users
        .into_iter()
        .zip(rs)
        .map(|((mut u, ph), r)| {
            u.r = r;
            u.psi = ph;
            u
        })
        .collect();
    Ok(FixedPointState {
        subset: subset.to_vec(),
        users,
        r_sum,
        residual: best.residual,
        iterations,
        converged,
        warm_started,
        beta: model.n_t() as f64 / model.n_r() as f64,
    })
}

/// Damped iteration `x + d (F(x) − x)`, optionally Anderson-accelerated over
/// the last `depth` steps.
struct Mixer {
    damping: f64,
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    fs: VecDeque<Vec<f64>>,
    best: f64,
}

impl Mixer {
    fn new(damping: f64, depth: usize) -> Self {
        Self {
            damping,
            depth,
            xs: VecDeque::new(),
            fs: VecDeque::new(),
            best: f64::INFINITY,
        }
    }

    fn step(&mut self, x: Vec<f64>, gx: Vec<f64>) -> Vec<f64> {
        let d = self.damping;
        let f: Vec<f64> = gx.iter().zip(&x).map(|(g, x)| g - x).collect();
        let plain: Vec<f64> = x.iter().zip(&f).map(|(x, f)| x + d * f).collect();
        if self.depth == 0 {
            return plain;
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 10.0 * self.best {
            // the extrapolation went astray; restart from a plain step
            self.xs.clear();
            self.fs.clear();
        }
        self.best = self.best.min(norm);
        self.xs.push_back(x.clone());
        self.fs.push_back(f.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.fs.pop_front();
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return plain;
        }
        let dim = x.len();
        let df = RMatrix::from_fn(dim, m, |i, j| self.fs[j + 1][i] - self.fs[j][i]);
        let dx = RMatrix::from_fn(dim, m, |i, j| self.xs[j + 1][i] - self.xs[j][i]);
        let rhs = nalgebra::DVector::from_column_slice(&f);
        let svd = df.clone().svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max();
        let Ok(alpha) = svd.solve(&rhs, cutoff) else {
            return plain;
        };
        let correction = (dx + df * d) * alpha;
        let next: Vec<f64> = plain.iter().zip(correction.iter()).map(|(p, c)| p - c).collect();
        if next.iter().all(|v| v.is_finite()) {
            next
        } else {
            plain
        }
    }
}

/// Asymptotic `I(d_A; y | d_{A^c})` in bits:
/// `Σ_t I(d_t; z_t) + log₂det(I + R_A) − log₂e Σ_t γ_tᵀ G_t ψ_t`.
pub fn asymptotic_conditional_mi(model: &SystemModel, state: &FixedPointState) -> Result<f64> {
    let n_r = state.r_sum.nrows();
    let virtual_mi: f64 = state.users.iter().map(|u| u.mi_bits).sum();
    let log_det = linalg::log2_det_hpd(&(CMatrix::identity(n_r, n_r) + &state.r_sum))?;
    let coupling: f64 = state
        .users
        .iter()
        .map(|u| {
            let g = model.stats().user(u.user).g();
            let mut s = 0.0;
            for n in 0..g.nrows() {
                for m in 0..g.ncols() {
                    s += u.gamma[n] * g[(n, m)] * u.psi[m];
                }
            }
            s
        })
        .sum();
    Ok(virtual_mi + log_det - LOG2_E * coupling)
}

/// One nested group `A_k = {1, …, k}` of the weighted sum rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEvaluation {
    pub mi_bits: f64,
    pub state: FixedPointState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsrEvaluation {
    /// `Σ_k Δ_k f(B_1, …, B_k)` in bits.
    pub value: f64,
    /// Entry `k` covers users `0..=k`; `None` when `Δ_k = 0`.
    pub groups: Vec<Option<GroupEvaluation>>,
}

impl WsrEvaluation {
    pub fn converged(&self) -> bool {
        self.groups.iter().flatten().all(|g| g.state.converged)
    }

    pub fn max_residual(&self) -> f64 {
        self.groups.iter().flatten().map(|g| g.state.residual).fold(0.0, f64::max)
    }

    pub fn group(&self, k: usize) -> Option<&GroupEvaluation> {
        self.groups.get(k).and_then(Option::as_ref)
    }
}

/// Asymptotic weighted sum rate with users in decoding order.
pub fn wsr_objective(
    model: &SystemModel,
    precoders: &PrecoderSet,
    noise: &NoiseBank,
    opts: &FixedPointOptions,
    warm_start: Option<&WsrEvaluation>,
) -> Result<WsrEvaluation> {
    if precoders.len() != model.n_users() {
        return Err(Error::Validation(format!(
            "{} precoders for {} users",
            precoders.len(),
            model.n_users()
        )));
    }
    let deltas = precoders.deltas();
    let mut value = 0.0;
    let mut groups = Vec::with_capacity(deltas.len());
    for (k, &delta) in deltas.iter().enumerate() {
        if delta == 0.0 {
            groups.push(None);
            continue;
        }
        let subset: Vec<usize> = (0..=k).collect();
        let warm = warm_start.and_then(|w| w.group(k)).map(|g| &g.state);
        let state = solve_fixed_point(model, precoders, &subset, noise, opts, warm)?;
        let mi_bits = asymptotic_conditional_mi(model, &state)?;
        value += delta * mi_bits;
        groups.push(Some(GroupEvaluation { mi_bits, state }));
    }
    Ok(WsrEvaluation { value, groups })
}


#[cfg(test)]
mod mixer_tests {
    use super::*;

    fn iterate(depth: usize, steps: usize) -> f64 {
        let j = RMatrix::from_row_slice(
            4,
            4,
            &[
                0.51, 0.03, 0.0055, 0.4364, 0.399, 0.0267, 0.005, 0.405, 0.159, 0.0171, 0.0037, 0.3013,
                0.2447, 0.0263, 0.0057, 0.4638,
            ],
        );
        let b = nalgebra::DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let mut mixer = Mixer::new(0.5, depth);
        let mut x = vec![0.0; 4];
        let mut f = f64::INFINITY;
        for _ in 0..steps {
            let gx = &j * nalgebra::DVector::from_vec(x.clone()) + &b;
            f = gx.iter().zip(&x).map(|(g, x)| (g - x).powi(2)).sum::<f64>().sqrt();
            x = mixer.step(x, gx.as_slice().to_vec());
        }
        f
    }

    #[test]
    fn anderson_beats_plain_damping_on_a_linear_map() {
        let accelerated = iterate(3, 12);
        let plain = iterate(0, 12);
        assert!(accelerated < 1e-8, "{accelerated:e}");
        assert!(plain > 1e-3, "{plain:e}");
    }
}
