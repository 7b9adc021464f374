//! Tokenization, vocabulary overlap and text similarity.

use std::collections::{BTreeMap, BTreeSet};

use super::MetricsError;

/// Lowercase, split on anything that is not alphanumeric, drop empties.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word tokens for lexicon matching: like [`tokens`] but an apostrophe
/// between letters stays inside the word, so "don't" is one token.
pub fn words(text: &str) -> Vec<String> {
    let normalized = text.replace(['\u{2019}', '\u{2018}'], "'");
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = normalized.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn vocabulary(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub value: f64,
    /// Set when one vocabulary is empty and the rate is defined as 0.
    pub degenerate: bool,
}

/// |V_a ∩ V_b| / min(|V_a|, |V_b|).
pub fn vocab_overlap(a: &str, b: &str) -> Overlap {
    let (va, vb) = (vocabulary(a), vocabulary(b));
    let denom = va.len().min(vb.len());
    if denom == 0 {
        return Overlap {
            value: 0.0,
            degenerate: true,
        };
    }
    Overlap {
        value: va.intersection(&vb).count() as f64 / denom as f64,
        degenerate: false,
    }
}

/// `100 · (1 − random / target)`, in percent. Negative when the random pair
/// is the more similar one.
pub fn normalized_relative_similarity(target_sim: f64, random_sim: f64) -> Result<f64, MetricsError> {
    if target_sim.is_nan() || target_sim <= 0.0 {
        return Err(MetricsError::NonPositiveTarget(target_sim));
    }
    Ok(100.0 * (1.0 - random_sim / target_sim))
}

/// Pluggable sentence similarity.
pub trait TextSimilarity: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, MetricsError>;
}

/// Cosine over term-frequency vectors of [`tokens`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalCosine;

fn term_frequencies(text: &str) -> BTreeMap<String, f64> {
    let mut tf = BTreeMap::new();
    for t in tokens(text) {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

impl TextSimilarity for LexicalCosine {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, MetricsError> {
        let (ta, tb) = (term_frequencies(a), term_frequencies(b));
        if ta.is_empty() || tb.is_empty() {
            return Err(MetricsError::EmptyText);
        }
        let dot: f64 = ta
            .iter()
            .filter_map(|(k, x)| tb.get(k).map(|y| x * y))
            .sum();
        let na = ta.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = tb.values().map(|x| x * x).sum::<f64>().sqrt();
        Ok((dot / (na * nb)).clamp(0.0, 1.0))
    }
}

/// Source of sentence embeddings, e.g. an embeddings endpoint.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError>;
}

/// Cosine between embeddings; negative cosines are reported as 0.
pub struct EmbeddingSimilarity<E> {
    pub embedder: E,
}

impl<E: Embedder> TextSimilarity for EmbeddingSimilarity<E> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, MetricsError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(MetricsError::EmptyText);
        }
        let ea = self.embedder.embed(a)?;
        let eb = self.embedder.embed(b)?;
        cosine(&ea, &eb)
            .map(|c| c.clamp(0.0, 1.0))
            .ok_or_else(|| MetricsError::Embedding("degenerate or mismatched embeddings".into()))
    }
}
