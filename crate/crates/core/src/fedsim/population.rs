use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stationary synthetic clients: every client draws its tokens from one
/// fixed Zipf distribution over `types` word ids.
#[derive(Clone, Debug)]
pub struct ZipfPopulation {
    dist: WeightedIndex<f64>,
    pub clients_per_round: usize,
    pub tokens_per_client: usize,
}

impl ZipfPopulation {
    pub fn new(types: usize, exponent: f64, clients_per_round: usize, tokens_per_client: usize) -> Result<Self> {
        let weights: Vec<f64> = (0..types).map(|r| (r as f64 + 1.0).powf(-exponent)).collect();
        let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("Zipf population: {e}")))?;
        Ok(ZipfPopulation { dist, clients_per_round, tokens_per_client })
    }

    /// Pooled counts of one round under `lambda` clipping.
    pub fn round(&self, seed: u64, round: usize, lambda: f64) -> BTreeMap<u32, f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        let mut out = BTreeMap::new();
        let w = super::unigrams::clip_weight(self.tokens_per_client as f64, lambda);
        for _ in 0..self.clients_per_round {
            for _ in 0..self.tokens_per_client {
                *out.entry(self.dist.sample(&mut rng) as u32).or_insert(0.0) += w;
            }
        }
        out
    }
}
