//! Silver/gold curation over judged episodes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::judge::JudgeVerdict;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub sample_rate: f64,
    pub seed: u64,
    pub sentiment_threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { sample_rate: 0.1, seed: 7, sentiment_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curated {
    /// Episode ids passing all three criteria, in input order.
    pub silver: Vec<String>,
    /// Seeded sample of `silver` awaiting human review.
    pub gold_candidates: Vec<String>,
}

/// `round(n * rate)` silver ids drawn without replacement, kept in silver order.
pub fn gold_sample(silver: &[String], rate: f64, seed: u64) -> Vec<String> {
    let k = ((silver.len() as f64) * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, silver.len(), k.min(silver.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| silver[i].clone()).collect()
}

pub fn curate(episode_ids: &[String], verdicts: &[JudgeVerdict], cfg: &CurationConfig) -> Result<Curated> {
    if episode_ids.len() != verdicts.len() {
        return Err(Error::InvalidInput(format!("{} episodes but {} verdicts", episode_ids.len(), verdicts.len())));
    }
    let silver: Vec<String> = episode_ids
        .iter()
        .zip(verdicts)
        .filter(|(_, v)| v.passes(cfg.sentiment_threshold))
        .map(|(id, _)| id.clone())
        .collect();
    let gold_candidates = gold_sample(&silver, cfg.sample_rate, cfg.seed);
    Ok(Curated { silver, gold_candidates })
}

/// A reviewer's decision on one gold candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub episode_id: String,
    pub approved: bool,
}

/// Read reviewer decisions from a JSON array of [`Review`].
pub fn import_reviews(path: &Path) -> Result<BTreeMap<String, bool>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let reviews: Vec<Review> = serde_json::from_slice(&bytes)?;
    Ok(reviews.into_iter().map(|r| (r.episode_id, r.approved)).collect())
}

/// Gold set: candidates a reviewer approved.
pub fn apply_reviews(candidates: &[String], reviews: &BTreeMap<String, bool>) -> Vec<String> {
    candidates.iter().filter(|id| reviews.get(*id) == Some(&true)).cloned().collect()
}
