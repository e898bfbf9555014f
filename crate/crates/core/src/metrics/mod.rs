//! Translationese metrics.
//!
//! Lexical diversity ([`lexical`]), POS-tag perplexity ([`perplexity`]) and
//! embedding similarity ([`similarity`]) operate on a single sentence; the
//! [`summary`] module aggregates them over the units of one language and
//! method into `mean ± std` rows.

use alloc::string::String;
use alloc::vec::Vec;

pub mod lexical;
pub mod perplexity;
pub mod similarity;
pub mod summary;
pub mod text;

pub use lexical::{mtld, mtld_directional, ttr, MtldConfig};
pub use perplexity::{entropy, pos_perplexity, SentenceAggregation, TokenDistribution};
pub use similarity::{cosine_similarity, english_sentence_id, EmbeddingVector};
pub use summary::{
    mtld_summary, perplexity_summary, similarity_summary, MtldSummary, Pairing, PerplexitySummary, SummaryStat,
};
pub use text::{tokenize, TokenSequence, TokenizationScheme};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("TTR threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("undefined result: {0}")]
    UndefinedResult(&'static str),
    #[error("probabilities of `{token}` sum to {sum}, not 1")]
    NotNormalized { token: String, sum: f64 },
    #[error("invalid probability {value} for tag `{tag}` of `{token}`")]
    InvalidProbability { token: String, tag: String, value: f64 },
    #[error("sentence has no token distributions")]
    EmptySentence,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("embedding `{0}` has non-finite values")]
    NonFinite(String),
    #[error("missing {kind} for {} sentence(s): {}", .ids.len(), .ids.join(", "))]
    MissingInputs { kind: &'static str, ids: Vec<String> },
    #[error("no units selected")]
    NoUnits,
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}
