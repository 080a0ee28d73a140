//! Weichselberger statistical CSI, derived correlation matrices, channel
//! sampling and the precoder set they act on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, RMatrix};
use crate::noise::{complex_gaussian, rng_from_seed};

/// Default tolerance on `‖UᴴU − I‖_F`; accepts eigenbases quoted to four
/// decimals.
pub const DEFAULT_UNITARY_TOL: f64 = 2e-2;

/// Elementwise square of a nonnegative amplitude matrix.
pub fn coupling_matrix(g_tilde: &RMatrix) -> Result<RMatrix> {
    if let Some(bad) = g_tilde.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Validation(format!(
            "coupling amplitudes must be finite and nonnegative, found {bad}"
        )));
    }
    Ok(g_tilde.component_mul(g_tilde))
}

/// Statistical channel description of one user: `H = U_R (G̃ ⊙ W) U_Tᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStatistics {
    u_t: CMatrix,
    u_r: CMatrix,
    g_tilde: RMatrix,
    g: RMatrix,
}

impl UserStatistics {
    pub fn new(u_t: CMatrix, u_r: CMatrix, g_tilde: RMatrix, unitary_tol: f64) -> Result<Self> {
        let n_t = u_t.nrows();
        let n_r = u_r.nrows();
        if !u_t.is_square() || !u_r.is_square() {
            return Err(Error::Validation("eigenbases must be square".into()));
        }
        if g_tilde.nrows() != n_r || g_tilde.ncols() != n_t {
            return Err(Error::Validation(format!(
                "coupling matrix is {}x{}, expected {n_r}x{n_t}",
                g_tilde.nrows(),
                g_tilde.ncols()
            )));
        }
        for (name, u) in [("U_T", &u_t), ("U_R", &u_r)] {
            let defect = linalg::unitary_defect(u);
            if defect > unitary_tol {
                return Err(Error::Validation(format!(
                    "{name} is not unitary: ‖UᴴU − I‖_F = {defect:.3e} > {unitary_tol:.1e}"
                )));
            }
        }
        let g = coupling_matrix(&g_tilde)?;
        Ok(Self { u_t, u_r, g_tilde, g })
    }

    /// Replaces both eigenbases by their polar (closest unitary) factors.
    pub fn reorthonormalized(&self) -> Result<Self> {
        Ok(Self {
            u_t: linalg::polar_factor(&self.u_t)?,
            u_r: linalg::polar_factor(&self.u_r)?,
            g_tilde: self.g_tilde.clone(),
            g: self.g.clone(),
        })
    }

    pub fn u_t(&self) -> &CMatrix {
        &self.u_t
    }

    pub fn u_r(&self) -> &CMatrix {
        &self.u_r
    }

    pub fn g_tilde(&self) -> &RMatrix {
        &self.g_tilde
    }

    /// Coupling matrix `G = G̃ ⊙ G̃`.
    pub fn g(&self) -> &RMatrix {
        &self.g
    }

    pub fn n_t(&self) -> usize {
        self.u_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.u_r.nrows()
    }

    /// Diagonal of `Γ_T` (column sums of `G`).
    pub fn transmit_gains(&self) -> Vec<f64> {
        (0..self.g.ncols()).map(|m| self.g.column(m).sum()).collect()
    }

    /// Diagonal of `Γ_R` (row sums of `G`).
    pub fn receive_gains(&self) -> Vec<f64> {
        (0..self.g.nrows()).map(|n| self.g.row(n).sum()).collect()
    }

    /// `Σ_{n,m} g_{n,m} = E[tr(H Hᴴ)]`.
    pub fn total_gain(&self) -> f64 {
        self.g.sum()
    }

    /// `(R_t, R_r) = (U_T Γ_T U_Tᴴ, U_R Γ_R U_Rᴴ)`.
    pub fn correlation_matrices(&self) -> (CMatrix, CMatrix) {
        (
            linalg::unitary_congruence(&self.u_t, &self.transmit_gains()),
            linalg::unitary_congruence(&self.u_r, &self.receive_gains()),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CMatrix {
        let (n_r, n_t) = (self.n_r(), self.n_t());
        let inner = CMatrix::from_fn(n_r, n_t, |n, m| complex_gaussian(rng) * self.g_tilde[(n, m)]);
        &self.u_r * inner * self.u_t.adjoint()
    }
}

/// Statistical CSI of all users sharing one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    users: Vec<UserStatistics>,
}

impl ChannelStatistics {
    pub fn new(users: Vec<UserStatistics>) -> Result<Self> {
        let first = users
            .first()
            .ok_or_else(|| Error::Validation("at least one user is required".into()))?;
        let (n_t, n_r) = (first.n_t(), first.n_r());
        if let Some(k) = users.iter().position(|u| u.n_t() != n_t || u.n_r() != n_r) {
            return Err(Error::Validation(format!(
                "user {k} has dimensions {}x{}, expected {n_r}x{n_t}",
                users[k].n_r(),
                users[k].n_t()
            )));
        }
        Ok(Self { users })
    }

    pub fn users(&self) -> &[UserStatistics] {
        &self.users
    }

    pub fn user(&self, k: usize) -> &UserStatistics {
        &self.users[k]
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_t(&self) -> usize {
        self.users[0].n_t()
    }

    pub fn n_r(&self) -> usize {
        self.users[0].n_r()
    }

    pub fn correlation_matrices(&self, k: usize) -> (CMatrix, CMatrix) {
        self.users[k].correlation_matrices()
    }

    /// Draws a realisation of user `k`'s channel; pure function of `seed`.
    pub fn sample_channel(&self, k: usize, seed: u64) -> CMatrix {
        self.users[k].sample(&mut rng_from_seed(seed))
    }

    pub fn reorthonormalized(&self) -> Result<Self> {
        Ok(Self {
            users: self
                .users
                .iter()
                .map(UserStatistics::reorthonormalized)
                .collect::<Result<_>>()?,
        })
    }

    /// Linear power budget that yields the requested average SNR,
    /// `SNR = E[tr(H Hᴴ)] P / (N_t N_r)`.
    pub fn snr_to_power(&self, k: usize, snr_db: f64) -> Result<f64> {
        if !snr_db.is_finite() {
            return Err(Error::Validation(format!("SNR must be finite, got {snr_db}")));
        }
        let user = &self.users[k];
        let total = user.total_gain();
        if total <= 0.0 {
            return Err(Error::Division(format!("user {k} has an all-zero coupling matrix")));
        }
        Ok(10f64.powf(snr_db / 10.0) * (user.n_t() * user.n_r()) as f64 / total)
    }

    /// Reorders users; `order[i]` is the old index of the new user `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            users: order.iter().map(|&k| self.users[k].clone()).collect(),
        }
    }
}

/// Precoders `B_k`, power budgets `P_k` and rate weights `μ_k`, with users
/// indexed in decoding order (`μ_1 ≥ μ_2 ≥ …`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    precoders: Vec<CMatrix>,
    powers: Vec<f64>,
    weights: Vec<f64>,
}

/// Relative slack admitted on `tr(B Bᴴ) ≤ P`.
pub const POWER_SLACK: f64 = 1e-9;

impl PrecoderSet {
    pub fn new(precoders: Vec<CMatrix>, powers: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = precoders.len();
        if k == 0 || powers.len() != k || weights.len() != k {
            return Err(Error::Validation(format!(
                "precoder set needs matching, nonempty lists (got {k} precoders, {} powers, {} weights)",
                powers.len(),
                weights.len()
            )));
        }
        let n = precoders[0].nrows();
        for (i, b) in precoders.iter().enumerate() {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Validation(format!("precoder {i} must be {n}x{n}")));
            }
        }
        if let Some(p) = powers.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!("power budgets must be positive, got {p}")));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!("weights must be nonnegative, got {w}")));
        }
        if weights.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Validation(
                "weights must be sorted in descending order (decoding order)".into(),
            ));
        }
        let set = Self { precoders, powers, weights };
        for k in 0..set.len() {
            let used = set.used_power(k);
            if used > set.powers[k] * (1.0 + POWER_SLACK) {
                return Err(Error::Validation(format!(
                    "precoder {k} uses tr(BBᴴ) = {used} > P = {}",
                    set.powers[k]
                )));
            }
        }
        Ok(set)
    }

    /// No precoding, `B_k = √(P_k/N_t) I`, for every user.
    pub fn no_precoding(n_t: usize, powers: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let precoders = powers
            .iter()
            .map(|&p| identity_precoder(n_t, p))
            .collect::<Result<_>>()?;
        Self::new(precoders, powers, weights)
    }

    pub fn len(&self) -> usize {
        self.precoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precoders.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.precoders[0].nrows()
    }

    pub fn precoder(&self, k: usize) -> &CMatrix {
        &self.precoders[k]
    }

    pub fn precoders(&self) -> &[CMatrix] {
        &self.precoders
    }

    pub fn power(&self, k: usize) -> f64 {
        self.powers[k]
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn used_power(&self, k: usize) -> f64 {
        linalg::frobenius_sq(&self.precoders[k])
    }

    /// `Δ_k = μ_k − μ_{k+1}` with `μ_{K+1} = 0`.
    pub fn deltas(&self) -> Vec<f64> {
        let k = self.weights.len();
        (0..k)
            .map(|i| self.weights[i] - self.weights.get(i + 1).copied().unwrap_or(0.0))
            .collect()
    }

    /// Replaces `B_k` without re-validating the power budget.
    pub fn with_precoder(&self, k: usize, b: CMatrix) -> Self {
        let mut next = self.clone();
        next.precoders[k] = b;
        next
    }

    pub fn set_precoder(&mut self, k: usize, b: CMatrix) {
        self.precoders[k] = b;
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.precoders.clone(), self.powers.clone(), weights)
    }

    /// Whether each power constraint is active (binding to within `rel_tol`).
    pub fn active_constraints(&self, rel_tol: f64) -> Vec<bool> {
        (0..self.len())
            .map(|k| self.used_power(k) >= self.powers[k] * (1.0 - rel_tol))
            .collect()
    }
}

/// `√(P/N_t) I`.
pub fn identity_precoder(n_t: usize, power: f64) -> Result<CMatrix> {
    if !(power > 0.0) {
        return Err(Error::Validation(format!("power must be positive, got {power}")));
    }
    Ok(CMatrix::identity(n_t, n_t).scale((power / n_t as f64).sqrt()))
}

/// Stable permutation sorting users by descending weight.
pub fn decoding_order(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    order
}

/// The two-user, 2×2 jointly-correlated channel used throughout the
/// numerical examples.
pub fn two_user_example() -> ChannelStatistics {
    let u_t1 = CMatrix::from_row_slice(
        2,
        2,
        &[c(-0.7830, 0.0), c(0.6196, 0.0547), c(-0.6196, 0.0547), c(-0.7830, 0.0)],
    );
    let u_r1 = CMatrix::from_row_slice(
        2,
        2,
        &[c(0.9513, 0.0), c(-0.0364, 0.3061), c(0.0364, 0.3061), c(0.9513, 0.0)],
    );
    let g1 = RMatrix::from_row_slice(2, 2, &[1.8366, 0.3979, 0.6122, 0.3061]);
    let u_t2 = CMatrix::from_row_slice(
        2,
        2,
        &[c(-0.9628, 0.0), c(0.2683, -0.0313), c(-0.2683, -0.0313), c(-0.9628, 0.0)],
    );
    let u_r2 = CMatrix::from_row_slice(
        2,
        2,
        &[c(0.7757, 0.0), c(-0.0479, -0.6293), c(0.0479, -0.6293), c(0.7757, 0.0)],
    );
    let g2 = RMatrix::from_row_slice(2, 2, &[0.1242, 1.2415, 0.1862, 1.5519]);
    ChannelStatistics::new(vec![
        UserStatistics::new(u_t1, u_r1, g1, DEFAULT_UNITARY_TOL).expect("bundled user 1"),
        UserStatistics::new(u_t2, u_r2, g2, DEFAULT_UNITARY_TOL).expect("bundled user 2"),
    ])
    .expect("bundled statistics")
}
