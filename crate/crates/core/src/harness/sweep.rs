//! SNR sweeps: optimized design against the no-precoding baseline, with
//! optional exact-MI oracle values, written incrementally to disk.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use num_bigint::BigUint;

use super::config::{ConstellationSpec, ExperimentConfig, Mode};
use super::io::{build_id, save_precoders, CsvSink, Provenance, SweepRow};
use super::oracle::{mc_exact_wsr, OracleOptions};
use crate::channel::{decoding_order, PrecoderSet};
use crate::constellation::{search_space_size, CsiMode};
use crate::error::{Error, Result};
use crate::fixed_point::wsr_objective;
use crate::model::SystemModel;
use crate::noise::derive_seed;
use crate::optimizer::{optimize, report_bank, OptimizerConfig};

const ORACLE_STREAM: u64 = 0x4f52_4143_4c45;

/// Summation counts for `n_users` users sharing one signal set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub constellation: ConstellationSpec,
    pub statistical: BigUint,
    pub instantaneous: BigUint,
}

pub fn count_table(specs: &[ConstellationSpec], n_users: usize, n_t: u32) -> Vec<CountRow> {
    specs
        .iter()
        .map(|&spec| {
            let q = vec![spec.order; n_users];
            CountRow {
                constellation: spec,
                statistical: search_space_size(&q, n_t, CsiMode::Statistical),
                instantaneous: search_space_size(&q, n_t, CsiMode::Instantaneous),
            }
        })
        .collect()
}

/// Three significant digits in scientific notation.
pub fn scientific(n: &BigUint) -> String {
    let digits = n.to_string();
    if digits.len() <= 4 {
        return digits;
    }
    let value: f64 = digits[..4].parse::<f64>().unwrap_or(0.0) / 1000.0;
    let mut mantissa = (value * 100.0).round() / 100.0;
    let mut exp = digits.len() - 1;
    if mantissa >= 10.0 {
        mantissa /= 10.0;
        exp += 1;
    }
    format!("{mantissa:.2}e{exp}")
}

pub fn format_count_table(rows: &[CountRow], n_users: usize, n_t: u32) -> String {
    let mut out = format!("summation counts for K = {n_users}, N_t = {n_t}\n");
    out.push_str(&format!("{:<12} {:>24} {:>12}\n", "csi", "constellation", "count"));
    for (mode, pick) in [("statistical", 0), ("instantaneous", 1)] {
        for r in rows {
            let n = if pick == 0 { &r.statistical } else { &r.instantaneous };
            let shown = if pick == 0 { n.to_string() } else { scientific(n) };
            out.push_str(&format!("{mode:<12} {:>24} {shown:>12}\n", r.constellation.to_string()));
        }
    }
    out
}

/// Everything a sweep produced, users in config order.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Optimized precoders per SNR point (decoding order), when computed.
    pub precoders: Vec<Option<PrecoderSet>>,
    /// `order[i]` is the config index of decoding-order user `i`.
    pub order: Vec<usize>,
    pub counts: Vec<CountRow>,
    pub csv_path: Option<PathBuf>,
}

fn count_specs(config: &ExperimentConfig) -> Vec<ConstellationSpec> {
    let mut specs: Vec<ConstellationSpec> = Vec::new();
    for u in &config.users {
        if !specs.contains(&u.constellation) {
            specs.push(u.constellation);
        }
    }
    specs
}

/// Optimizer settings of SNR point `i`; every point gets its own seed.
pub fn point_optimizer(config: &ExperimentConfig, i: usize) -> OptimizerConfig {
    OptimizerConfig {
        seed: derive_seed(config.seed, i as u64),
        ..config.optimizer.clone()
    }
}

fn unpermute<T: Clone>(values: &[T], order: &[usize]) -> Vec<T> {
    let mut out = values.to_vec();
    for (i, &k) in order.iter().enumerate() {
        out[k] = values[i].clone();
    }
    out
}

fn scale_to(set: &PrecoderSet, powers: &[f64], weights: &[f64]) -> Result<PrecoderSet> {
    let precoders = set
        .precoders()
        .iter()
        .zip(set.powers().iter().zip(powers))
        .map(|(b, (&old, &new))| b.scale((new / old).sqrt()))
        .collect();
    PrecoderSet::new(precoders, powers.to_vec(), weights.to_vec())
}

struct PointResult {
    row: SweepRow,
    precoders: Option<PrecoderSet>,
}

fn run_point(
    config: &ExperimentConfig,
    model: &SystemModel,
    weights: &[f64],
    order: &[usize],
    i: usize,
    snr_db: f64,
    warm: Option<&PrecoderSet>,
) -> Result<PointResult> {
    let clock = Instant::now();
    let powers = (0..model.n_users())
        .map(|k| model.stats().snr_to_power(k, snr_db))
        .collect::<Result<Vec<_>>>()?;
    let opt_config = point_optimizer(config, i);
    let np = PrecoderSet::no_precoding(model.n_t(), powers.clone(), weights.to_vec())?;
    let report = report_bank(model, &opt_config);
    let np_eval = wsr_objective(model, &np, &report, &opt_config.fixed_point, None)?;
    let mut row = SweepRow {
        snr_db,
        wsr_opt_bits: None,
        wsr_np_bits: np_eval.value,
        mc_exact_bits: None,
        mc_se_bits: None,
        residual: np_eval.max_residual(),
        converged: np_eval.converged(),
        seconds: 0.0,
        powers: unpermute(&powers, order),
        error: None,
    };
    let mut optimized = None;
    if config.mode == Mode::Optimize {
        let warm = warm.map(|w| scale_to(w, &powers, weights)).transpose()?;
        let out = optimize(model, &powers, weights, &opt_config, warm.as_ref())?;
        let best = &out.trace.starts[out.trace.best_start];
        row.wsr_opt_bits = Some(out.trace.best_wsr);
        row.residual = row.residual.max(best.report_residual);
        row.converged &= best.converged;
        optimized = Some(out.precoders);
    }
    let oracle_on = config.mode == Mode::Oracle || (config.mode == Mode::Optimize && config.oracle.enabled);
    if oracle_on {
        let opts = OracleOptions {
            n_channels: config.oracle.n_channels,
            n_noise: config.oracle.n_noise,
            seed: derive_seed(derive_seed(config.seed, ORACLE_STREAM), i as u64),
            alphabet_cap: config.oracle.alphabet_cap,
        };
        let target = optimized.as_ref().unwrap_or(&np);
        let est = mc_exact_wsr(model.stats(), model, target, &opts)?;
        row.mc_exact_bits = Some(est.bits);
        row.mc_se_bits = Some(est.std_error);
    }
    row.seconds = clock.elapsed().as_secs_f64();
    Ok(PointResult { row, precoders: optimized })
}

fn precoder_path(dir: &Path, snr_db: f64) -> PathBuf {
    dir.join("precoders").join(format!("snr_{snr_db:+.2}dB.json"))
}

/// Runs the configured sweep. With `out_dir` set, writes `sweep.csv` row
/// by row, one precoder document per optimized point and `precoders.json`
/// for the last successful one.
///
/// A failing SNR point is logged and recorded (rates NaN, not converged)
/// and the sweep moves on.
pub fn run_sweep(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SweepOutcome> {
    config.validate()?;
    let model_cfg = config.model()?;
    let order = decoding_order(&config.weights);
    if config.mode == Mode::Count {
        let n_t = u32::try_from(model_cfg.n_t()).map_err(|_| Error::Validation("N_t too large".into()))?;
        return Ok(SweepOutcome {
            rows: Vec::new(),
            precoders: Vec::new(),
            order,
            counts: count_table(&count_specs(config), model_cfg.n_users(), n_t),
            csv_path: None,
        });
    }
    let model = model_cfg.permuted(&order);
    let weights: Vec<f64> = order.iter().map(|&k| config.weights[k]).collect();
    let hash = config.hash()?;
    let csv_path = out_dir.map(|d| d.join("sweep.csv"));
    let mut sink = csv_path.as_deref().map(CsvSink::create).transpose()?;
    let mut rows = Vec::new();
    let mut precoders = Vec::new();
    let mut warm: Option<PrecoderSet> = None;
    for (i, &snr) in config.snr_db.iter().enumerate() {
        let point = run_point(config, &model, &weights, &order, i, snr, warm.as_ref()).unwrap_or_else(|e| {
            warn!("SNR {snr} dB failed: {e}");
            PointResult {
                row: SweepRow {
                    snr_db: snr,
                    wsr_opt_bits: None,
                    wsr_np_bits: f64::NAN,
                    mc_exact_bits: None,
                    mc_se_bits: None,
                    residual: f64::NAN,
                    converged: false,
                    seconds: 0.0,
                    powers: Vec::new(),
                    error: Some(e.to_string()),
                },
                precoders: None,
            }
        });
        info!(
            "SNR {snr:>6.2} dB: optimized {:?}, no precoding {:.4} bits ({:.1} s)",
            point.row.wsr_opt_bits, point.row.wsr_np_bits, point.row.seconds
        );
        if let Some(s) = sink.as_mut() {
            s.write(&point.row)?;
        }
        if let (Some(dir), Some(set)) = (out_dir, point.precoders.as_ref()) {
            let provenance = Provenance {
                config_hash: hash.clone(),
                seed: point_optimizer(config, i).seed,
                build_id: build_id(),
                snr_db: Some(snr),
                user_order: Some(order.clone()),
            };
            save_precoders(&precoder_path(dir, snr), set, &provenance)?;
            save_precoders(&dir.join("precoders.json"), set, &provenance)?;
        }
        if point.precoders.is_some() {
            warm = point.precoders.clone();
        }
        rows.push(point.row);
        precoders.push(point.precoders);
    }
    Ok(SweepOutcome {
        rows,
        precoders,
        order,
        counts: Vec::new(),
        csv_path,
    })
}
