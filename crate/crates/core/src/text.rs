//! Text utilities shared across modules: token estimates, normalization and
//! the term-frequency cosine used by both agent dispatch and retrieval.

use std::collections::BTreeMap;

/// Deterministic token estimate: whitespace word count × 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    words_to_tokens(text.split_whitespace().count() as u64)
}

pub fn words_to_tokens(words: u64) -> u64 {
    (words * 13).div_ceil(10)
}

/// Largest word count whose estimate still fits in `cap` tokens.
pub fn max_words_for(cap: u64) -> u64 {
    // ceil(13w/10) <= cap  <=>  13w <= 10cap
    (cap * 10) / 13
}

/// Keep the leading words of `text` so the estimate stays within `cap`.
pub fn truncate_to_tokens(text: &str, cap: u64) -> String {
    let keep = max_words_for(cap) as usize;
    text.split_whitespace().take(keep).collect::<Vec<_>>().join(" ")
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Function words ignored when comparing requests to profile descriptions.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "from", "about", "is", "are",
    "was", "be", "i", "me", "my", "you", "your", "it", "its", "this", "that", "what", "s", "how", "do", "does", "can",
    "could", "should", "would", "will", "please", "some", "any",
];

/// Sparse term-frequency vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermVector(BTreeMap<String, f64>);

impl TermVector {
    pub fn from_text(text: &str) -> Self {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0.0) += 1.0;
        }
        TermVector(counts)
    }

    /// Like [`TermVector::from_text`], without [`STOPWORDS`].
    pub fn content(text: &str) -> Self {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text).into_iter().filter(|t| !STOPWORDS.contains(&t.as_str())) {
            *counts.entry(tok).or_insert(0.0) += 1.0;
        }
        TermVector(counts)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        TermVector(self.0.iter().map(|(k, v)| (k.clone(), v * factor)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &TermVector) -> f64 {
        let (small, large) = if self.0.len() <= other.0.len() { (self, other) } else { (other, self) };
        small.0.iter().filter_map(|(k, v)| large.0.get(k).map(|w| v * w)).sum()
    }

    /// Cosine similarity; zero when either side is empty.
    pub fn cosine(&self, other: &TermVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

/// Does `haystack` contain `needle` as a whole-word phrase (case-insensitive)?
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let hay = tokenize(haystack);
    let pat = tokenize(needle);
    if pat.is_empty() || pat.len() > hay.len() {
        return false;
    }
    hay.windows(pat.len()).any(|w| w == pat.as_slice())
}
