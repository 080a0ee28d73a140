//! Projected gradient ascent on the asymptotic weighted sum rate with a
//! backtracking (Armijo) line search, per-user sweeps and multiple starts.

use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{identity_precoder, PrecoderSet};
use crate::error::{Error, Result};
use crate::fixed_point::{wsr_objective, FixedPointOptions, WsrEvaluation};
use crate::gradient::{user_gradient, Reading};
use crate::linalg::{self, c, CMatrix};
use crate::model::SystemModel;
use crate::noise::{complex_gaussian, derive_seed, rng_from_seed, NoiseBank};

/// Stream index of the common pool used to rank starts.
const REPORT_STREAM: u64 = 0x5245_504f_5254;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Armijo fraction `θ ∈ (0, 0.5)`.
    pub backtrack_theta: f64,
    /// Step shrink factor `ω ∈ (0, 1)`.
    pub backtrack_omega: f64,
    /// Stop when one outer iteration gains at most this many bits.
    pub tol: f64,
    pub max_outer: usize,
    pub c_threshold: f64,
    pub n_starts: usize,
    pub seed: u64,
    /// Noise samples per user for the objective and gradient.
    pub mc_objective: usize,
    /// Noise samples per user for the reported value.
    pub mc_report: usize,
    pub fixed_point: FixedPointOptions,
    pub reading: Reading,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            backtrack_theta: 0.1,
            backtrack_omega: 0.5,
            tol: 1e-4,
            max_outer: 100,
            c_threshold: 1e-8,
            n_starts: 5,
            seed: 1,
            mc_objective: 500,
            mc_report: 5000,
            fixed_point: FixedPointOptions::default(),
            reading: Reading::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.backtrack_theta > 0.0 && self.backtrack_theta < 0.5) {
            return bad("backtrack_theta must lie in (0, 0.5)");
        }
        if !(self.backtrack_omega > 0.0 && self.backtrack_omega < 1.0) {
            return bad("backtrack_omega must lie in (0, 1)");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be nonnegative");
        }
        if !(self.c_threshold > 0.0) {
            return bad("c_threshold must be positive");
        }
        if self.n_starts == 0 || self.max_outer == 0 {
            return bad("n_starts and max_outer must be at least 1");
        }
        if self.mc_objective == 0 || self.mc_report == 0 {
            return bad("Monte Carlo sample counts must be at least 1");
        }
        if !(self.fixed_point.damping > 0.0 && self.fixed_point.damping <= 1.0) {
            return bad("fixed_point.damping must lie in (0, 1]");
        }
        Ok(())
    }
}

/// `√(P/N_t) I`, the no-precoding baseline.
pub fn baseline_np(n_t: usize, power: f64) -> Result<CMatrix> {
    identity_precoder(n_t, power)
}

/// Relative excess over the budget treated as rounding, so that projecting
/// a projected precoder leaves it bit-for-bit unchanged.
const PROJECTION_SLACK: f64 = 1e-12;

/// Scales `B` onto `tr(B Bᴴ) = P` when it exceeds the budget.
pub fn project_power(b: &CMatrix, power: f64) -> CMatrix {
    let used = linalg::frobenius_sq(b);
    if used > power * (1.0 + PROJECTION_SLACK) {
        b.scale((power / used).sqrt())
    } else {
        b.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome<T> {
    /// Accepted step, or the last step tried.
    pub step: f64,
    pub trials: usize,
    /// Objective and payload of the accepted candidate.
    pub accepted: Option<(f64, T)>,
}

/// Backtracking from `u = 1`: accept the first `u` with
/// `R(u) ≥ r_old + θ u ‖∇‖²`, shrinking `u ← ω u` otherwise, and give up once
/// `θ u ‖∇‖²` drops below `c_threshold`. `eval` returns `None` for a trial
/// that cannot be evaluated, which counts as a rejection.
pub fn backtrack_line_search<T, F>(
    r_old: f64,
    grad_norm_sq: f64,
    theta: f64,
    omega: f64,
    c_threshold: f64,
    mut eval: F,
) -> LineSearchOutcome<T>
where
    F: FnMut(f64) -> Option<(f64, T)>,
{
    let mut u = 1.0;
    let mut trials = 0;
    loop {
        let c = theta * u * grad_norm_sq;
        if !(c >= c_threshold) {
            return LineSearchOutcome { step: u, trials, accepted: None };
        }
        trials += 1;
        if let Some((r, payload)) = eval(u) {
            if r >= r_old + c {
                return LineSearchOutcome { step: u, trials, accepted: Some((r, payload)) };
            }
        }
        u *= omega;
    }
}

#[derive(Debug, Clone)]
pub struct BacktrackResult {
    pub precoders: PrecoderSet,
    pub evaluation: WsrEvaluation,
    pub step: f64,
    pub trials: usize,
    pub accepted: bool,
}

/// Line search along `∇_{B_l}` for user `l`, holding the noise bank fixed.
pub fn backtrack_update(
    model: &SystemModel,
    precoders: &PrecoderSet,
    current: &WsrEvaluation,
    l: usize,
    gradient: &CMatrix,
    noise: &NoiseBank,
    config: &OptimizerConfig,
) -> BacktrackResult {
    let b = precoders.precoder(l);
    let power = precoders.power(l);
    let outcome = backtrack_line_search(
        current.value,
        linalg::frobenius_sq(gradient),
        config.backtrack_theta,
        config.backtrack_omega,
        config.c_threshold,
        |u| {
            let candidate = project_power(&(b + gradient * c(u, 0.0)), power);
            let next = precoders.with_precoder(l, candidate);
            match wsr_objective(model, &next, noise, &config.fixed_point, Some(current)) {
                Ok(ev) if ev.converged() => Some((ev.value, (next, ev))),
                Ok(ev) => {
                    debug!("trial u = {u:.3e} for user {l} rejected: residual {:.2e}", ev.max_residual());
                    None
                }
                Err(e) => {
                    debug!("trial u = {u:.3e} for user {l} rejected: {e}");
                    None
                }
            }
        },
    );
    match outcome.accepted {
        Some((_, (next, ev))) => BacktrackResult {
            precoders: next,
            evaluation: ev,
            step: outcome.step,
            trials: outcome.trials,
            accepted: true,
        },
        None => BacktrackResult {
            precoders: precoders.clone(),
            evaluation: current.clone(),
            step: 0.0,
            trials: outcome.trials,
            accepted: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    NoPrecoding,
    WarmStart,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// WSR at the start of the iteration on its noise bank.
    pub wsr_start: f64,
    /// WSR after the user sweep on the same noise bank.
    pub wsr_end: f64,
    /// Objective after each accepted step, in order.
    pub accepted_values: Vec<f64>,
    /// Accepted step per user (0 when the user was left unchanged).
    pub steps: Vec<f64>,
    pub trials: Vec<usize>,
    pub residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub index: usize,
    pub kind: StartKind,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    /// Largest `tr(B Bᴴ)/P` over all users and iterates.
    pub max_power_ratio: f64,
    /// Whether the stopping rule fired (as opposed to hitting `max_outer`).
    pub stopped: bool,
    /// Every fixed point along the run converged.
    pub converged: bool,
    /// WSR of the final iterate on the common report pool.
    pub report_wsr: f64,
    /// Largest fixed-point residual of that evaluation.
    pub report_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub starts: Vec<StartTrace>,
    pub best_start: usize,
    pub best_wsr: f64,
    pub active_constraints: Vec<bool>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub precoders: PrecoderSet,
    pub trace: OptimizerTrace,
}

fn random_precoder(n_t: usize, power: f64, seed: u64) -> CMatrix {
    let mut rng = rng_from_seed(seed);
    let b = CMatrix::from_fn(n_t, n_t, |_, _| complex_gaussian(&mut rng));
    let norm = linalg::frobenius_sq(&b);
    b.scale((power / norm).sqrt())
}

fn initial_point(
    model: &SystemModel,
    powers: &[f64],
    weights: &[f64],
    kind: StartKind,
    seed: u64,
    warm: Option<&PrecoderSet>,
) -> Result<PrecoderSet> {
    let n_t = model.n_t();
    match kind {
        StartKind::NoPrecoding => PrecoderSet::no_precoding(n_t, powers.to_vec(), weights.to_vec()),
        StartKind::WarmStart => {
            let warm = warm.expect("warm start kind requires precoders");
            let precoders = warm
                .precoders()
                .iter()
                .zip(powers)
                .map(|(b, &p)| project_power(b, p))
                .collect();
            PrecoderSet::new(precoders, powers.to_vec(), weights.to_vec())
        }
        StartKind::Random => {
            let precoders = powers
                .iter()
                .enumerate()
                .map(|(k, &p)| random_precoder(n_t, p, derive_seed(seed, k as u64)))
                .collect();
            PrecoderSet::new(precoders, powers.to_vec(), weights.to_vec())
        }
    }
}

fn max_power_ratio(set: &PrecoderSet) -> f64 {
    (0..set.len()).map(|k| set.used_power(k) / set.power(k)).fold(0.0, f64::max)
}

fn run_start(
    model: &SystemModel,
    init: PrecoderSet,
    index: usize,
    kind: StartKind,
    seed: u64,
    config: &OptimizerConfig,
) -> (PrecoderSet, StartTrace) {
    let n_users = init.len();
    let mut set = init;
    let mut trace = StartTrace {
        index,
        kind,
        seed,
        iterations: Vec::new(),
        max_power_ratio: max_power_ratio(&set),
        stopped: false,
        converged: true,
        report_wsr: f64::NAN,
        report_residual: f64::NAN,
    };
    let mut warm: Option<WsrEvaluation> = None;
    for n in 0..config.max_outer {
        let clock = Instant::now();
        let noise = NoiseBank::new(n_users, model.n_t(), config.mc_objective, derive_seed(seed, n as u64));
        let mut ev = match wsr_objective(model, &set, &noise, &config.fixed_point, warm.as_ref()) {
            Ok(ev) => ev,
            Err(e) => {
                debug!("start {index}: objective failed at iteration {n}: {e}");
                trace.converged = false;
                break;
            }
        };
        if !ev.converged() {
            debug!("start {index}: fixed point not converged at iteration {n} (residual {:.2e})", ev.max_residual());
            trace.converged = false;
            break;
        }
        let mut record = IterationRecord {
            wsr_start: ev.value,
            wsr_end: ev.value,
            accepted_values: Vec::new(),
            steps: vec![0.0; n_users],
            trials: vec![0; n_users],
            residual: ev.max_residual(),
            seconds: 0.0,
        };
        for l in 0..n_users {
            let grad = match user_gradient(model, &set, &ev, &noise, config.reading, l) {
                Ok(g) => g,
                Err(e) => {
                    debug!("start {index}: gradient for user {l} failed: {e}");
                    trace.converged = false;
                    continue;
                }
            };
            let step = backtrack_update(model, &set, &ev, l, &grad, &noise, config);
            record.trials[l] = step.trials;
            if step.accepted {
                record.steps[l] = step.step;
                record.accepted_values.push(step.evaluation.value);
                record.residual = record.residual.max(step.evaluation.max_residual());
                set = step.precoders;
                ev = step.evaluation;
                trace.max_power_ratio = trace.max_power_ratio.max(max_power_ratio(&set));
            }
        }
        record.wsr_end = ev.value;
        record.seconds = clock.elapsed().as_secs_f64();
        let gain = record.wsr_end - record.wsr_start;
        debug!("start {index} iteration {n}: wsr {:.6} (gain {gain:.3e})", record.wsr_end);
        trace.iterations.push(record);
        warm = Some(ev);
        if gain <= config.tol {
            trace.stopped = true;
            break;
        }
    }
    (set, trace)
}

/// Noise bank on which `optimize` ranks starts and reports the WSR.
pub fn report_bank(model: &SystemModel, config: &OptimizerConfig) -> NoiseBank {
    NoiseBank::new(model.n_users(), model.n_t(), config.mc_report, derive_seed(config.seed, REPORT_STREAM))
}

/// Runs the projected gradient ascent from `n_starts` initial points and
/// keeps the one with the largest WSR on a common report pool.
///
/// Start 0 is the no-precoding point; start 1 reuses `warm` when given;
/// the rest draw i.i.d. complex Gaussian entries scaled to full power.
pub fn optimize(
    model: &SystemModel,
    powers: &[f64],
    weights: &[f64],
    config: &OptimizerConfig,
    warm: Option<&PrecoderSet>,
) -> Result<OptimizeOutput> {
    config.validate()?;
    if powers.len() != model.n_users() || weights.len() != model.n_users() {
        return Err(Error::Validation(format!(
            "{} powers and {} weights for {} users",
            powers.len(),
            weights.len(),
            model.n_users()
        )));
    }
    let plan: Vec<(usize, StartKind, u64)> = (0..config.n_starts)
        .map(|i| {
            let kind = match i {
                0 => StartKind::NoPrecoding,
                1 if warm.is_some() => StartKind::WarmStart,
                _ => StartKind::Random,
            };
            (i, kind, derive_seed(config.seed, i as u64))
        })
        .collect();
    let inits = plan
        .iter()
        .map(|&(_, kind, seed)| initial_point(model, powers, weights, kind, seed, warm))
        .collect::<Result<Vec<_>>>()?;
    let report_noise = report_bank(model, config);
    let mut runs: Vec<(PrecoderSet, StartTrace)> = plan
        .par_iter()
        .zip(inits)
        .map(|(&(i, kind, seed), init)| run_start(model, init, i, kind, seed, config))
        .collect();
    for (set, trace) in runs.iter_mut() {
        let ev = wsr_objective(model, set, &report_noise, &config.fixed_point, None)?;
        trace.converged &= ev.converged();
        trace.report_wsr = ev.value;
        trace.report_residual = ev.max_residual();
    }
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| t.converged)
        .max_by(|a, b| a.1 .1.report_wsr.total_cmp(&b.1 .1.report_wsr))
        .or_else(|| runs.iter().enumerate().max_by(|a, b| a.1 .1.report_wsr.total_cmp(&b.1 .1.report_wsr)))
        .map(|(i, _)| i)
        .expect("at least one start");
    let converged = runs.iter().any(|(_, t)| t.converged);
    let precoders = runs[best].0.clone();
    let best_wsr = runs[best].1.report_wsr;
    info!("best start {best} ({:?}) with WSR {best_wsr:.4} bits", runs[best].1.kind);
    let trace = OptimizerTrace {
        active_constraints: precoders.active_constraints(1e-6),
        starts: runs.into_iter().map(|(_, t)| t).collect(),
        best_start: best,
        best_wsr,
        converged,
    };
    Ok(OptimizeOutput { precoders, trace })
}
