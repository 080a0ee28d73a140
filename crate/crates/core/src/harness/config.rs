//! Experiment configuration: a TOML document with the channel statistics,
//! signal sets, SNR grid, weights and solver settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelStatistics, UserStatistics, DEFAULT_UNITARY_TOL};
use crate::constellation::{build_constellation, Constellation, ConstellationKind};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, RMatrix};
use crate::model::SystemModel;
use crate::optimizer::OptimizerConfig;

/// What a sweep computes at every SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Optimized and no-precoding sum rates (plus the oracle when enabled).
    #[default]
    Optimize,
    /// No-precoding sum rate only.
    Evaluate,
    /// No-precoding sum rate and its Monte Carlo exact value.
    Oracle,
    /// Summation counts of the configured signal sets.
    Count,
}

/// A signal set written as a label: `bpsk`, `qpsk`, `8psk`, `16qam`, `4pam`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstellationSpec {
    pub kind: ConstellationKind,
    pub order: usize,
}

impl ConstellationSpec {
    pub fn build(&self) -> Result<Constellation> {
        build_constellation(self.kind, self.order)
    }
}

impl std::str::FromStr for ConstellationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "bpsk" => return Ok(Self { kind: ConstellationKind::Bpsk, order: 2 }),
            "qpsk" => return Ok(Self { kind: ConstellationKind::Qpsk, order: 4 }),
            _ => {}
        }
        let split = lower.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(lower.len());
        let (digits, family) = lower.split_at(split);
        let order: usize = digits
            .parse()
            .map_err(|_| Error::Config(format!("constellation `{s}` needs an order prefix such as 8psk")))?;
        let kind = match family {
            "psk" => ConstellationKind::Psk,
            "qam" => ConstellationKind::Qam,
            "pam" => ConstellationKind::Pam,
            _ => return Err(Error::Config(format!("unknown constellation family in `{s}`"))),
        };
        Ok(Self { kind, order })
    }
}

impl std::fmt::Display for ConstellationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ConstellationKind::Bpsk => f.write_str("bpsk"),
            ConstellationKind::Qpsk => f.write_str("qpsk"),
            ConstellationKind::Psk => write!(f, "{}psk", self.order),
            ConstellationKind::Qam => write!(f, "{}qam", self.order),
            ConstellationKind::Pam => write!(f, "{}pam", self.order),
        }
    }
}

impl Serialize for ConstellationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConstellationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One user's statistics; complex entries are `[re, im]` pairs, matrices
/// are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub constellation: ConstellationSpec,
    pub u_t: Vec<Vec<[f64; 2]>>,
    pub u_r: Vec<Vec<[f64; 2]>>,
    pub g_tilde: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub enabled: bool,
    pub n_channels: usize,
    pub n_noise: usize,
    /// Largest joint alphabet `Π_t M_t` the oracle enumerates.
    pub alphabet_cap: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            n_channels: 2000,
            n_noise: 500,
            alphabet_cap: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    /// SNR grid in dB, strictly increasing.
    pub snr_db: Vec<f64>,
    /// Rate weights `μ_k`, one per user, in config order.
    pub weights: Vec<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_unitary_tol")]
    pub unitary_tol: f64,
    /// Replace the eigenbases by their closest unitary matrices.
    #[serde(default)]
    pub reorthonormalize: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub users: Vec<UserConfig>,
}

fn default_seed() -> u64 {
    1
}

fn default_unitary_tol() -> f64 {
    DEFAULT_UNITARY_TOL
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn complex_matrix(rows: &[Vec<[f64; 2]>], what: &str) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

fn real_matrix(rows: &[Vec<f64>], what: &str) -> Result<RMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(RMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows_of(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

impl UserConfig {
    pub fn from_statistics(user: &UserStatistics, constellation: ConstellationSpec) -> Self {
        let g = user.g_tilde();
        Self {
            constellation,
            u_t: rows_of(user.u_t()),
            u_r: rows_of(user.u_r()),
            g_tilde: (0..g.nrows()).map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect()).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Validation("at least one user is required".into()));
        }
        if self.weights.len() != self.users.len() {
            return Err(Error::Validation(format!(
                "{} weights given for {} users",
                self.weights.len(),
                self.users.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!("weights must be nonnegative, got {w}")));
        }
        validate_grid(&self.snr_db)?;
        self.optimizer.validate()?;
        if self.oracle.n_channels == 0 || self.oracle.n_noise == 0 {
            return Err(Error::Validation("oracle sample counts must be at least 1".into()));
        }
        // dimensions are checked when the statistics are built
        self.statistics()?;
        for u in &self.users {
            u.constellation.build()?;
        }
        Ok(())
    }

    pub fn statistics(&self) -> Result<ChannelStatistics> {
        let users = self
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                UserStatistics::new(
                    complex_matrix(&u.u_t, &format!("users[{k}].u_t"))?,
                    complex_matrix(&u.u_r, &format!("users[{k}].u_r"))?,
                    real_matrix(&u.g_tilde, &format!("users[{k}].g_tilde"))?,
                    self.unitary_tol,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = ChannelStatistics::new(users)?;
        if self.reorthonormalize {
            stats.reorthonormalized()
        } else {
            Ok(stats)
        }
    }

    /// Model in config user order.
    pub fn model(&self) -> Result<SystemModel> {
        let constellations = self.users.iter().map(|u| u.constellation.build()).collect::<Result<_>>()?;
        SystemModel::new(self.statistics()?, constellations)
    }
}

pub fn validate_grid(snr_db: &[f64]) -> Result<()> {
    if snr_db.is_empty() {
        return Err(Error::Validation("SNR grid must not be empty".into()));
    }
    if let Some(s) = snr_db.iter().find(|s| !s.is_finite()) {
        return Err(Error::Validation(format!("SNR values must be finite, got {s}")));
    }
    if snr_db.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("SNR grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Parses a comma-separated SNR list such as `-10,0,10`.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let grid = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid SNR value `{}`", t.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_grid(&grid)?;
    Ok(grid)
}
