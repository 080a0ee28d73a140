use crate::channel::ChannelStatistics;
use crate::constellation::{Constellation, VectorAlphabet, DEFAULT_ALPHABET_CAP};
use crate::error::{Error, Result};

/// Channel statistics together with each user's signal set.
#[derive(Debug, Clone)]
pub struct SystemModel {
    stats: ChannelStatistics,
    constellations: Vec<Constellation>,
    alphabets: Vec<VectorAlphabet>,
}

impl SystemModel {
    pub fn new(stats: ChannelStatistics, constellations: Vec<Constellation>) -> Result<Self> {
        Self::with_cap(stats, constellations, DEFAULT_ALPHABET_CAP)
    }

    pub fn with_cap(
        stats: ChannelStatistics,
        constellations: Vec<Constellation>,
        alphabet_cap: usize,
    ) -> Result<Self> {
        if constellations.len() != stats.n_users() {
            return Err(Error::Validation(format!(
                "{} constellations given for {} users",
                constellations.len(),
                stats.n_users()
            )));
        }
        let alphabets = constellations
            .iter()
            .map(|c| VectorAlphabet::with_cap(c, stats.n_t(), alphabet_cap))
            .collect::<Result<_>>()?;
        Ok(Self { stats, constellations, alphabets })
    }

    /// Same signal set for every user.
    pub fn uniform(stats: ChannelStatistics, constellation: Constellation) -> Result<Self> {
        let k = stats.n_users();
        Self::new(stats, vec![constellation; k])
    }

    pub fn stats(&self) -> &ChannelStatistics {
        &self.stats
    }

    pub fn constellation(&self, k: usize) -> &Constellation {
        &self.constellations[k]
    }

    pub fn constellations(&self) -> &[Constellation] {
        &self.constellations
    }

    pub fn alphabet(&self, k: usize) -> &VectorAlphabet {
        &self.alphabets[k]
    }

    pub fn n_users(&self) -> usize {
        self.stats.n_users()
    }

    pub fn n_t(&self) -> usize {
        self.stats.n_t()
    }

    pub fn n_r(&self) -> usize {
        self.stats.n_r()
    }

    /// `Σ_k N_t log₂Q_k`, the saturation level of the sum rate.
    pub fn max_sum_rate(&self) -> f64 {
        self.alphabets.iter().map(VectorAlphabet::log2_size).sum()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            stats: self.stats.permuted(order),
            constellations: order.iter().map(|&k| self.constellations[k].clone()).collect(),
            alphabets: order.iter().map(|&k| self.alphabets[k].clone()).collect(),
        }
    }
}
