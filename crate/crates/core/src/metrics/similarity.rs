//! Cosine similarity between sentence embeddings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub sentence_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(sentence_id: impl Into<String>, values: Vec<f64>) -> Self {
        EmbeddingVector { sentence_id: sentence_id.into(), values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Sentence id under which the English source of a scene is embedded.
pub fn english_sentence_id(storyboard_id: &str, scene_index: u32) -> String {
    format!("en:{storyboard_id}:{scene_index}")
}

/// `dot(a, b) / (‖a‖·‖b‖)`, clamped to `[-1, 1]`. Higher means more similar.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    for (v, norm) in [(a, norm_a), (b, norm_b)] {
        if !norm.is_finite() || v.values.iter().any(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite(v.sentence_id.clone()));
        }
        if norm == 0.0 {
            return Err(MetricError::ZeroNorm(v.sentence_id.clone()));
        }
    }
    // sqrt(fl(n·n)) == n, so a vector compared with itself yields exactly 1
    let product = norm_a * norm_b;
    let denom = if product.is_finite() && product > 0.0 {
        libm::sqrt(product)
    } else {
        libm::sqrt(norm_a) * libm::sqrt(norm_b)
    };
    Ok((dot / denom).clamp(-1.0, 1.0))
}
