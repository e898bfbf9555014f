//! Type-token ratio and MTLD (Measure of Textual Lexical Diversity).

use alloc::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtldConfig {
    pub ttr_threshold: f64,
    /// Count the unfinished final segment as a fraction of a factor.
    pub partial_factors: bool,
}

impl Default for MtldConfig {
    fn default() -> Self {
        MtldConfig { ttr_threshold: 0.72, partial_factors: true }
    }
}

impl MtldConfig {
    pub fn new(ttr_threshold: f64, partial_factors: bool) -> Result<Self, MetricError> {
        let cfg = MtldConfig { ttr_threshold, partial_factors };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), MetricError> {
        if self.ttr_threshold > 0.0 && self.ttr_threshold < 1.0 {
            Ok(())
        } else {
            Err(MetricError::InvalidThreshold(self.ttr_threshold))
        }
    }
}

/// Distinct tokens over total tokens.
pub fn ttr<T: Ord>(tokens: &[T]) -> Result<f64, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let types: BTreeSet<&T> = tokens.iter().collect();
    Ok(types.len() as f64 / tokens.len() as f64)
}

fn factor_count<'a, T: Ord + 'a>(tokens: impl Iterator<Item = &'a T>, cfg: &MtldConfig) -> f64 {
    let mut factors = 0.0;
    let mut types = BTreeSet::new();
    let mut segment_len = 0usize;
    for token in tokens {
        types.insert(token);
        segment_len += 1;
        // the token that drops the ratio below threshold closes the factor
        if (types.len() as f64 / segment_len as f64) < cfg.ttr_threshold {
            factors += 1.0;
            types.clear();
            segment_len = 0;
        }
    }
    if cfg.partial_factors && segment_len > 0 {
        let remainder_ttr = types.len() as f64 / segment_len as f64;
        factors += (1.0 - remainder_ttr) / (1.0 - cfg.ttr_threshold);
    }
    factors
}

fn ratio(len: usize, factors: f64) -> Result<f64, MetricError> {
    if factors > 0.0 {
        Ok(len as f64 / factors)
    } else {
        Err(MetricError::UndefinedResult("MTLD factor count is zero"))
    }
}

/// One-directional MTLD scanning left to right: token count over factor
/// count.
pub fn mtld_directional<T: Ord>(tokens: &[T], cfg: &MtldConfig) -> Result<f64, MetricError> {
    cfg.check()?;
    if tokens.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    ratio(tokens.len(), factor_count(tokens.iter(), cfg))
}

/// Mean of the forward and reversed directional scores.
pub fn mtld<T: Ord>(tokens: &[T], cfg: &MtldConfig) -> Result<f64, MetricError> {
    let forward = mtld_directional(tokens, cfg)?;
    let reverse = ratio(tokens.len(), factor_count(tokens.iter().rev(), cfg))?;
    Ok((forward + reverse) / 2.0)
}
