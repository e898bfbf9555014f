//! Core of the storyboard elicitation toolkit.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (an allocator is required):
//!
//! * [`corpus`]: storyboards, scenes, translation units, ingestion checks,
//!   per-(language, method) counts and same-scene alignment.
//! * [`metrics`]: tokenization, TTR/MTLD, POS-tag perplexity, cosine
//!   similarity and the corpus-level `mean ± std` summaries built on them.
//! * [`agreement`]: Fleiss' kappa, preference tallies and the exact binomial
//!   randomness test used on pairwise judgments.
//! * [`protocol`]: the two elicitation tracks as state machines, blinded
//!   evaluation task generation, assignment and judgment resolution.
//! * [`state`]: the event-sourced aggregate that ties the protocol together
//!   and is rebuilt by replaying an event log.
//!
//! File formats, persistence, the HTTP service and the CLI live in the
//! `elicit` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agreement;
pub mod corpus;
pub mod metrics;
pub mod protocol;
pub mod state;

pub use agreement::{fleiss_kappa, preference_tally, randomness_test, AgreementError, PreferenceTally, RatingsMatrix};
pub use corpus::{
    align_by_scene, corpus_counts, validate_corpus, Corpus, CorpusError, CountsTable, LanguageCode, Method,
    Scene, ScenePairSet, Storyboard, TranslationUnit, ValidationReport,
};
pub use metrics::{
    cosine_similarity, entropy, mtld, mtld_directional, pos_perplexity, tokenize, ttr, EmbeddingVector, MetricError,
    MtldConfig, SentenceAggregation, SummaryStat, TokenDistribution, TokenSequence, TokenizationScheme,
};
