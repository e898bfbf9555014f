//! Entropy and perplexity of per-token POS-tag distributions.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Allowed deviation of a distribution's total mass from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Tagger output for one token: probability per POS tag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub token: String,
    pub probs: BTreeMap<String, f64>,
}

impl TokenDistribution {
    pub fn check(&self) -> Result<(), MetricError> {
        for (tag, &p) in &self.probs {
            if !p.is_finite() || p < 0.0 {
                return Err(MetricError::InvalidProbability { token: self.token.clone(), tag: tag.clone(), value: p });
            }
        }
        let sum: f64 = self.probs.values().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(MetricError::NotNormalized { token: self.token.clone(), sum });
        }
        Ok(())
    }
}

/// Shannon entropy in bits, with `0 · log 0 = 0`.
pub fn entropy(dist: &TokenDistribution) -> Result<f64, MetricError> {
    dist.check()?;
    let h: f64 = dist.probs.values().filter(|&&p| p > 0.0).map(|&p| -p * libm::log2(p)).sum();
    // -0.0 and round-off below zero for one-hot distributions
    Ok(h.max(0.0))
}

/// How per-token uncertainty is folded into one sentence score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceAggregation {
    /// `2^(mean entropy)`: geometric mean of per-token perplexities.
    #[default]
    MeanEntropy,
    /// Arithmetic mean of per-token perplexities `2^H`.
    MeanPerplexity,
}

/// Perplexity of a tagged sentence.
pub fn pos_perplexity(sentence: &[TokenDistribution], aggregation: SentenceAggregation) -> Result<f64, MetricError> {
    if sentence.is_empty() {
        return Err(MetricError::EmptySentence);
    }
    let n = sentence.len() as f64;
    match aggregation {
        SentenceAggregation::MeanEntropy => {
            let mut total = 0.0;
            for dist in sentence {
                total += entropy(dist)?;
            }
            Ok(libm::exp2(total / n))
        }
        SentenceAggregation::MeanPerplexity => {
            let mut total = 0.0;
            for dist in sentence {
                total += libm::exp2(entropy(dist)?);
            }
            Ok(total / n)
        }
    }
}
