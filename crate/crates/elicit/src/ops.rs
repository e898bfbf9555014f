//! Operations shared by the command line and the HTTP service.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use elicit_core::agreement::AgreementError;
use elicit_core::corpus::{validate_corpus, Corpus, CorpusError, LanguageCode, Method, ValidationReport};
use elicit_core::metrics::{
    mtld_summary, perplexity_summary, similarity_summary, EmbeddingVector, MetricError, MtldConfig, Pairing,
    SentenceAggregation, SummaryStat, TokenDistribution,
};
use elicit_core::protocol::{assign_tasks, ProtocolError, Role};
use elicit_core::state::{Batch, BatchSpec, Event, State};
use serde::{Deserialize, Serialize};

use crate::bundle::{copy_dir, read_bundle, read_languages, BundleError, Languages};
use crate::export::write_manifest;
use crate::inputs::InputError;
use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("corpus has {} error(s); first: {}", .0.errors.len(), .0.errors[0].message)]
    Invalid(ValidationReport),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

impl OpError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            OpError::Protocol(e) => protocol_code(e),
            OpError::Bundle(BundleError::Io { .. }) => "io",
            OpError::Bundle(_) => "invalid_bundle",
            OpError::Invalid(_) => "invalid_corpus",
            OpError::Store(StoreError::Locked(_)) => "data_dir_locked",
            OpError::Store(StoreError::Corrupt { .. } | StoreError::Replay(_)) => "corrupt_log",
            OpError::Store(_) => "storage_unavailable",
            OpError::Agreement(AgreementError::NoItems) => "no_items",
            OpError::Agreement(AgreementError::NoDecisiveJudgments) => "no_decisive_judgments",
            OpError::Agreement(AgreementError::Undefined) => "undefined_result",
            OpError::Agreement(AgreementError::NoJudgments) => "no_judgments",
            OpError::Agreement(_) => "invalid_ratings",
            OpError::Metric(MetricError::MissingInputs { .. }) => "missing_inputs",
            OpError::Metric(MetricError::NoUnits) => "no_units",
            OpError::Metric(MetricError::UndefinedResult(_)) => "undefined_result",
            OpError::Metric(MetricError::Corpus(e)) => corpus_code(e),
            OpError::Metric(_) => "invalid_input",
            OpError::Input(InputError::Io { .. }) | OpError::Io { .. } => "io",
            OpError::Input(_) => "invalid_input",
            OpError::Usage(_) => "usage",
        }
    }
}

fn corpus_code(e: &CorpusError) -> &'static str {
    match e {
        CorpusError::UnknownLanguage(_) => "unknown_language",
        CorpusError::UnknownStoryboard { .. } => "unknown_storyboard",
        _ => "invalid_corpus",
    }
}

pub fn protocol_code(e: &ProtocolError) -> &'static str {
    use ProtocolError::*;
    match e {
        InvalidTransition { .. } => "invalid_transition",
        GapNotElapsed { .. } => "gap_not_elapsed",
        DuplicateSession { .. } => "duplicate_session",
        UnknownAnnotator(_) => "unknown_annotator",
        CorpusExists(_) => "corpus_exists",
        UnknownCorpus(_) => "unknown_corpus",
        UnknownStoryboard(_) => "unknown_storyboard",
        UnknownScene { .. } => "unknown_scene",
        UnknownSession(_) => "unknown_session",
        AlreadyJudged(_) => "already_judged",
        UnknownBatch(_) => "unknown_batch",
        UnknownTask(_) => "unknown_task",
        UnknownUnit(_) => "unknown_unit",
        EmptyText => "empty_text",
        EmptySample => "empty_sample",
        InsufficientPairedScenes { .. } => "insufficient_paired_scenes",
        NoRaters => "no_raters",
        TooFewAnnotators { .. } => "too_few_annotators",
        InfeasibleAssignment { .. } => "infeasible_assignment",
        NotAssigned { .. } => "not_assigned",
        DuplicateJudgment { .. } => "duplicate_judgment",
        Forbidden { .. } => "forbidden",
        Corpus(e) => corpus_code(e),
    }
}

pub fn corpora_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("corpora")
}

pub fn inputs_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("inputs")
}

/// Language names declared by an imported corpus.
pub fn corpus_languages(data_dir: &Path, corpus_id: &str) -> Languages {
    read_languages(&corpora_dir(data_dir).join(corpus_id)).unwrap_or_default()
}

/// The corpus id to use when none was given: the only one there is.
pub fn default_corpus(state: &State, corpus_id: Option<&str>) -> Result<String, OpError> {
    match corpus_id {
        Some(id) => {
            state.corpus(id)?;
            Ok(id.to_string())
        }
        None => {
            let mut ids = state.corpora().keys();
            match (ids.next(), ids.next()) {
                (Some(id), None) => Ok(id.clone()),
                (None, _) => Err(OpError::Usage("no corpus imported yet".into())),
                _ => Err(OpError::Usage("several corpora imported; name one".into())),
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Imported {
    pub corpus_id: String,
    pub report: ValidationReport,
}

/// Loads and validates a bundle directory, copies it under the data
/// directory and records the import.
pub fn import_bundle(store: &mut Store, src: &Path, corpus_id: Option<String>) -> Result<Imported, OpError> {
    let bundle = read_bundle(src)?;
    let report = validate_corpus(&bundle.corpus, |r| bundle.image_exists(r));
    if !report.is_ok() {
        return Err(OpError::Invalid(report));
    }
    let event = store.state().prepare_import(corpus_id, bundle.corpus)?;
    let Event::CorpusImported { corpus_id, .. } = &event else { unreachable!("import yields CorpusImported") };
    let corpus_id = corpus_id.clone();
    let dest = corpora_dir(store.dir()).join(&corpus_id);
    if src != dest {
        if dest.exists() {
            // left over from an import whose event never made it to the log
            fs::remove_dir_all(&dest).map_err(|source| OpError::Io { path: dest.clone(), source })?;
        }
        copy_dir(src, &dest).map_err(|source| OpError::Io { path: dest.clone(), source })?;
    }
    store.commit(event)?;
    Ok(Imported { corpus_id, report })
}

/// Registers each id with `role` unless it already holds it.
pub fn ensure_registered(store: &mut Store, ids: &[String], role: Role) -> Result<(), OpError> {
    for id in ids {
        if let Some(e) = store.state().prepare_registration(id, role) {
            store.commit(e)?;
        }
    }
    Ok(())
}

/// Generates a batch, records it and writes its manifest file.
pub fn create_batch(store: &mut Store, spec: &BatchSpec, now: DateTime<Utc>) -> Result<Batch, OpError> {
    let event = store.state().prepare_batch(spec, now)?;
    let Event::BatchCreated { batch } = &event else { unreachable!("prepare_batch yields BatchCreated") };
    let id = batch.manifest.batch_id.clone();
    store.commit(event)?;
    let batch = store.state().batch(&id)?.clone();
    write_manifest(store.dir(), &batch.manifest).map_err(|source| OpError::Io { path: store.dir().into(), source })?;
    Ok(batch)
}

/// Assigns a batch to `annotators` (registered as evaluators if needed).
pub fn assign_batch(store: &mut Store, batch_id: &str, raters: usize, annotators: &[String]) -> Result<Batch, OpError> {
    {
        let state = store.state();
        let batch = state.batch(batch_id)?;
        let corpus = state.corpus(&batch.manifest.corpus_id)?;
        assign_tasks(&batch.tasks, annotators, raters, corpus)?;
    }
    let unknown: Vec<String> = annotators.iter().filter(|a| store.state().role(a).is_none()).cloned().collect();
    ensure_registered(store, &unknown, Role::Evaluator)?;
    let event = store.state().prepare_assignment(batch_id, raters, Some(annotators))?;
    store.commit(event)?;
    let batch = store.state().batch(batch_id)?.clone();
    write_manifest(store.dir(), &batch.manifest).map_err(|source| OpError::Io { path: store.dir().into(), source })?;
    Ok(batch)
}

/// Generates and assigns in one step; nothing is recorded unless both
/// would succeed.
pub fn create_assigned_batch(
    store: &mut Store,
    spec: &BatchSpec,
    raters: usize,
    annotators: &[String],
    now: DateTime<Utc>,
) -> Result<Batch, OpError> {
    {
        let state = store.state();
        let corpus = state.corpus(&spec.corpus_id)?;
        let probe = Batch::generate("probe", &spec.corpus_id, corpus, &spec.request, now)?;
        assign_tasks(&probe.tasks, annotators, raters, corpus)?;
    }
    let batch = create_batch(store, spec, now)?;
    assign_batch(store, &batch.manifest.batch_id, raters, annotators)
}

/// Tasks per annotator in a batch.
pub fn assignment_load(batch: &Batch) -> BTreeMap<String, usize> {
    let mut load = BTreeMap::new();
    for raters in batch.assignment.values() {
        for r in raters {
            *load.entry(r.clone()).or_insert(0) += 1;
        }
    }
    load
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mtld,
    Similarity,
    Perplexity,
}

#[derive(Clone, Debug)]
pub struct MetricQuery {
    pub kind: MetricKind,
    /// `None` runs every language, leaving out those without inputs.
    pub language: Option<LanguageCode>,
    pub method: Option<Method>,
    pub pairing: Pairing,
    pub mtld: MtldConfig,
    pub aggregation: SentenceAggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub language: LanguageCode,
    /// Absent for storyboard-vs-text similarity, which spans both.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(flatten)]
    pub stat: SummaryStat,
    /// Units left out because their MTLD is undefined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<usize>,
}

fn has_inputs<V>(corpus: &Corpus, code: &LanguageCode, inputs: &BTreeMap<String, V>) -> bool {
    corpus.units().iter().any(|u| &u.language == code && inputs.contains_key(&u.id))
}

/// Summary rows for one metric.
pub fn metric_rows(
    corpus: &Corpus,
    order: &[LanguageCode],
    q: &MetricQuery,
    embeddings: Option<&BTreeMap<String, EmbeddingVector>>,
    pos: Option<&BTreeMap<String, Vec<TokenDistribution>>>,
) -> Result<Vec<MetricRow>, OpError> {
    let explicit = q.language.is_some();
    // a single selected summary reports why it is empty; wider queries skip it
    let strict = explicit && (q.method.is_some() || (q.kind == MetricKind::Similarity && q.pairing == Pairing::StoryboardVsText));
    let languages: Vec<LanguageCode> = match &q.language {
        Some(l) => vec![l.clone()],
        None => order.to_vec(),
    };
    let methods: Vec<Method> = match q.method {
        Some(m) => vec![m],
        None => vec![Method::Storyboard, Method::Text],
    };
    let need = |what: &str| OpError::Usage(format!("{what} file required"));
    let mut rows = Vec::new();
    for code in &languages {
        match q.kind {
            MetricKind::Mtld => {
                for &m in &methods {
                    match mtld_summary(corpus, code, m, &q.mtld) {
                        Ok(s) => rows.push(MetricRow {
                            language: code.clone(),
                            method: Some(m),
                            stat: s.stat,
                            excluded: Some(s.excluded.len()),
                        }),
                        Err(MetricError::NoUnits | MetricError::UndefinedResult(_)) if !strict => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            MetricKind::Similarity => {
                let emb = embeddings.ok_or_else(|| need("embeddings"))?;
                if !explicit && !has_inputs(corpus, code, emb) {
                    continue;
                }
                let skip = |r: Result<SummaryStat, MetricError>| match r {
                    Err(MetricError::NoUnits) if !strict => Ok(None),
                    other => other.map(Some),
                };
                match q.pairing {
                    Pairing::VsEnglish => {
                        for &m in &methods {
                            if let Some(stat) = skip(similarity_summary(corpus, emb, code, q.pairing, Some(m)))? {
                                rows.push(MetricRow { language: code.clone(), method: Some(m), stat, excluded: None });
                            }
                        }
                    }
                    Pairing::StoryboardVsText => {
                        if let Some(stat) = skip(similarity_summary(corpus, emb, code, q.pairing, None))? {
                            rows.push(MetricRow { language: code.clone(), method: None, stat, excluded: None });
                        }
                    }
                }
            }
            MetricKind::Perplexity => {
                let pos = pos.ok_or_else(|| need("POS"))?;
                if !explicit && !has_inputs(corpus, code, pos) {
                    continue;
                }
                for &m in &methods {
                    match perplexity_summary(corpus, pos, code, m, q.aggregation) {
                        Ok(s) => rows.push(MetricRow { language: code.clone(), method: Some(m), stat: s.stat, excluded: None }),
                        Err(MetricError::NoUnits) if !strict => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(MetricError::NoUnits.into());
    }
    Ok(rows)
}
