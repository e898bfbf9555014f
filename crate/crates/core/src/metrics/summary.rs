//! Corpus-level `mean ± std` summaries.
//!
//! Spread is the population standard deviation (divide by `n`). Values are
//! reduced in corpus order so results are reproducible bit for bit.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::lexical::{mtld, MtldConfig};
use super::perplexity::{pos_perplexity, SentenceAggregation, TokenDistribution};
use super::similarity::{cosine_similarity, english_sentence_id, EmbeddingVector};
use super::text::{tokenize, TokenizationScheme};
use super::MetricError;
use crate::corpus::{align_by_scene, Corpus, CorpusError, LanguageCode, Method};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl SummaryStat {
    /// Mean and population standard deviation. `None` for an empty input.
    pub fn from_values(values: &[f64]) -> Option<SummaryStat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(SummaryStat { mean, std: libm::sqrt(var), n: values.len() })
    }
}

/// Which sentences are compared in a similarity summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Each translation against the English sentence of its scene.
    VsEnglish,
    /// Every text unit against every storyboard unit of the same scene.
    StoryboardVsText,
}

fn lookup<'a>(
    embeddings: &'a BTreeMap<String, EmbeddingVector>,
    id: &str,
    missing: &mut Vec<String>,
) -> Option<&'a EmbeddingVector> {
    let found = embeddings.get(id);
    if found.is_none() && !missing.iter().any(|m| m == id) {
        missing.push(id.to_string());
    }
    found
}

/// Mean ± std of cosine similarity for one language.
///
/// `method` selects the translations compared against English and is
/// ignored for [`Pairing::StoryboardVsText`]; `None` takes both methods.
pub fn similarity_summary(
    corpus: &Corpus,
    embeddings: &BTreeMap<String, EmbeddingVector>,
    language: &LanguageCode,
    pairing: Pairing,
    method: Option<Method>,
) -> Result<SummaryStat, MetricError> {
    if !corpus.declares(language) {
        return Err(CorpusError::UnknownLanguage(language.clone()).into());
    }
    let mut missing = Vec::new();
    let mut pairs: Vec<(&EmbeddingVector, &EmbeddingVector)> = Vec::new();
    match pairing {
        Pairing::VsEnglish => {
            let units = corpus
                .units()
                .iter()
                .filter(|u| &u.language == language && method.is_none_or(|m| u.method == m));
            for unit in units {
                let english = lookup(embeddings, &english_sentence_id(&unit.storyboard_id, unit.scene_index), &mut missing);
                let translated = lookup(embeddings, &unit.id, &mut missing);
                if let (Some(e), Some(t)) = (english, translated) {
                    pairs.push((t, e));
                }
            }
        }
        Pairing::StoryboardVsText => {
            for set in align_by_scene(corpus, language)? {
                for text in &set.text_units {
                    for story in &set.storyboard_units {
                        let t = lookup(embeddings, &text.id, &mut missing);
                        let s = lookup(embeddings, &story.id, &mut missing);
                        if let (Some(t), Some(s)) = (t, s) {
                            pairs.push((t, s));
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(MetricError::MissingInputs { kind: "embeddings", ids: missing });
    }
    let sims = pairs.into_iter().map(|(a, b)| cosine_similarity(a, b)).collect::<Result<Vec<_>, _>>()?;
    SummaryStat::from_values(&sims).ok_or(MetricError::NoUnits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtldSummary {
    pub stat: SummaryStat,
    /// Units whose MTLD is undefined (no factors, or no tokens).
    pub excluded: Vec<String>,
}

/// MTLD per unit of (language, method), summarized.
pub fn mtld_summary(
    corpus: &Corpus,
    language: &LanguageCode,
    method: Method,
    cfg: &MtldConfig,
) -> Result<MtldSummary, MetricError> {
    if !corpus.declares(language) {
        return Err(CorpusError::UnknownLanguage(language.clone()).into());
    }
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    let mut selected = 0usize;
    for unit in corpus.units_for(language, method) {
        selected += 1;
        let tokens = tokenize(&unit.text, TokenizationScheme::UnicodeWords);
        match mtld(&tokens, cfg) {
            Ok(v) => values.push(v),
            Err(MetricError::UndefinedResult(_) | MetricError::EmptySequence) => excluded.push(unit.id.clone()),
            Err(e) => return Err(e),
        }
    }
    if selected == 0 {
        return Err(MetricError::NoUnits);
    }
    let stat = SummaryStat::from_values(&values)
        .ok_or(MetricError::UndefinedResult("MTLD is undefined for every selected unit"))?;
    Ok(MtldSummary { stat, excluded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexitySummary {
    /// Arithmetic mean (and spread) of sentence perplexities.
    pub stat: SummaryStat,
}

/// Sentence-level POS perplexity per unit, averaged over (language, method).
pub fn perplexity_summary(
    corpus: &Corpus,
    pos: &BTreeMap<String, Vec<TokenDistribution>>,
    language: &LanguageCode,
    method: Method,
    aggregation: SentenceAggregation,
) -> Result<PerplexitySummary, MetricError> {
    if !corpus.declares(language) {
        return Err(CorpusError::UnknownLanguage(language.clone()).into());
    }
    let mut missing = Vec::new();
    let mut values = Vec::new();
    for unit in corpus.units_for(language, method) {
        match pos.get(&unit.id) {
            Some(sentence) => values.push(pos_perplexity(sentence, aggregation)?),
            None => missing.push(unit.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(MetricError::MissingInputs { kind: "POS distributions", ids: missing });
    }
    let stat = SummaryStat::from_values(&values).ok_or(MetricError::NoUnits)?;
    Ok(PerplexitySummary { stat })
}
