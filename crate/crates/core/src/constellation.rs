//! Scalar signal sets, their per-user transmit-vector alphabets, and the
//! summation counts that drive design complexity.

use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};

/// Largest transmit-vector alphabet `Q^{N_t}` built without an explicit cap.
pub const DEFAULT_ALPHABET_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
    Psk,
    Qam,
    Pam,
}

impl fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ConstellationKind::Bpsk => "BPSK",
            ConstellationKind::Qpsk => "QPSK",
            ConstellationKind::Psk => "PSK",
            ConstellationKind::Qam => "QAM",
            ConstellationKind::Pam => "PAM",
        };
        f.write_str(name)
    }
}

/// Equiprobable scalar constellation with zero mean and unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<C64>,
}

impl Constellation {
    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn cardinality(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> f64 {
        (self.points.len() as f64).log2()
    }

    pub fn label(&self) -> String {
        match self.kind {
            ConstellationKind::Bpsk | ConstellationKind::Qpsk => self.kind.to_string(),
            _ => format!("{}{}", self.points.len(), self.kind),
        }
    }
}

/// Builds a constellation of the given family and cardinality.
///
/// PSK points start at angle zero and proceed counter-clockwise; QAM points
/// are listed row by row from the top-left corner of the square grid; PAM
/// points run from the most negative level upwards.
pub fn build_constellation(kind: ConstellationKind, q: usize) -> Result<Constellation> {
    if q < 2 {
        return Err(Error::Config(format!("{kind} needs at least 2 points, got {q}")));
    }
    let points = match kind {
        ConstellationKind::Bpsk => {
            expect_order(kind, q, 2)?;
            vec![c(1.0, 0.0), c(-1.0, 0.0)]
        }
        ConstellationKind::Qpsk => {
            expect_order(kind, q, 4)?;
            let a = std::f64::consts::FRAC_1_SQRT_2;
            vec![c(a, a), c(-a, a), c(-a, -a), c(a, -a)]
        }
        ConstellationKind::Psk => (0..q)
            .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / q as f64))
            .collect(),
        ConstellationKind::Pam => {
            let scale = (3.0 / ((q * q - 1) as f64)).sqrt();
            (0..q)
                .map(|i| c((2.0 * i as f64 - (q as f64 - 1.0)) * scale, 0.0))
                .collect()
        }
        ConstellationKind::Qam => {
            let side = (q as f64).sqrt().round() as usize;
            if !q.is_power_of_two() || side * side != q {
                return Err(Error::Config(format!(
                    "QAM order must be a square power of two, got {q}"
                )));
            }
            let scale = (1.5 / ((q - 1) as f64)).sqrt();
            let level = |i: usize| 2.0 * i as f64 - (side as f64 - 1.0);
            let mut pts = Vec::with_capacity(q);
            for row in 0..side {
                for col in 0..side {
                    pts.push(c(level(col) * scale, -level(row) * scale));
                }
            }
            pts
        }
    };
    Ok(Constellation { kind, points })
}

fn expect_order(kind: ConstellationKind, q: usize, want: usize) -> Result<()> {
    if q == want {
        Ok(())
    } else {
        Err(Error::Config(format!("{kind} has exactly {want} points, got {q}")))
    }
}

/// All `Q^{N_t}` transmit vectors of one user, stored row-major (`M × N_t`).
///
/// Vector `j` has antenna `i` set to point `(j / Q^i) mod Q`, so antenna 0
/// varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorAlphabet {
    n_t: usize,
    q: usize,
    data: Vec<C64>,
}

impl VectorAlphabet {
    pub fn new(constellation: &Constellation, n_t: usize) -> Result<Self> {
        Self::with_cap(constellation, n_t, DEFAULT_ALPHABET_CAP)
    }

    pub fn with_cap(constellation: &Constellation, n_t: usize, cap: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::Config("antenna count must be at least 1".into()));
        }
        let q = constellation.cardinality();
        let size = (q as u128).checked_pow(n_t as u32).unwrap_or(u128::MAX);
        if size > cap as u128 {
            return Err(Error::Size {
                what: format!("{}^{} transmit-vector alphabet", constellation.label(), n_t),
                size,
                cap: cap as u128,
            });
        }
        let m = size as usize;
        let pts = constellation.points();
        let mut data = Vec::with_capacity(m * n_t);
        for j in 0..m {
            let mut rest = j;
            for _ in 0..n_t {
                data.push(pts[rest % q]);
                rest /= q;
            }
        }
        Ok(Self { n_t, q, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn scalar_cardinality(&self) -> usize {
        self.q
    }

    pub fn vector(&self, j: usize) -> &[C64] {
        &self.data[j * self.n_t..(j + 1) * self.n_t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.n_t)
    }

    pub fn log2_size(&self) -> f64 {
        self.n_t as f64 * (self.q as f64).log2()
    }
}

/// Which transmitter-side knowledge the precoder design assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// Each user sums over its own alphabet: `Σ_k Q_k^{2N_t}`.
    Statistical,
    /// Sums run over the joint alphabet of all users: `(Π_k Q_k)^{2N_t}`.
    Instantaneous,
}

/// Number of summations needed for the mutual information and MSE matrices.
pub fn search_space_size(q_list: &[usize], n_t: u32, mode: CsiMode) -> BigUint {
    let exp = 2 * n_t;
    match mode {
        CsiMode::Statistical => q_list
            .iter()
            .map(|&q| BigUint::from(q).pow(exp))
            .sum(),
        CsiMode::Instantaneous => q_list
            .iter()
            .fold(BigUint::from(1u32), |acc, &q| acc * BigUint::from(q))
            .pow(exp),
    }
}
