//! Event-sourced protocol state.
//!
//! Every mutation goes through two steps. A `prepare_*` method validates a
//! command against the current state and returns the [`Event`] it would
//! produce without changing anything; the caller persists the event and then
//! hands it to [`State::apply`]. Replaying the same log into an empty
//! [`State`] rebuilds it exactly, and events whose id was already applied
//! are skipped.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agreement::{fleiss_kappa, randomness_test, AgreementError, Preference, PreferenceTally, RatingsMatrix};
use crate::corpus::{Corpus, LanguageCode, TranslationUnit};
use crate::protocol::payload::{ReadingPayload, ScenePayload, TaskPayload};
use crate::protocol::session::{Action, ElicitationSession, SessionState, Track};
use crate::protocol::tasks::{assign_tasks, generate_tasks, Assignment, EvaluationTask, TaskRequest};
use crate::protocol::{unblind, Judgment, ProtocolError, RawChoice, Role};

/// Written alongside every generated batch so the sample can be audited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub batch_id: String,
    pub corpus_id: String,
    pub task_kind: crate::protocol::TaskKind,
    pub language: LanguageCode,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shared_languages: Vec<LanguageCode>,
    /// Set once the batch is assigned.
    #[serde(default)]
    pub raters_per_task: Option<usize>,
    pub created_at: DateTime<Utc>,
    pub task_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub manifest: BatchManifest,
    pub tasks: Vec<EvaluationTask>,
    /// Empty until assigned.
    #[serde(default)]
    pub assignment: Assignment,
}

impl Batch {
    /// Samples the tasks of a new, unassigned batch.
    pub fn generate(
        batch_id: &str,
        corpus_id: &str,
        corpus: &Corpus,
        request: &TaskRequest,
        created_at: DateTime<Utc>,
    ) -> Result<Batch, ProtocolError> {
        let tasks = generate_tasks(corpus, request, batch_id)?;
        Ok(Batch {
            manifest: BatchManifest {
                batch_id: batch_id.into(),
                corpus_id: corpus_id.into(),
                task_kind: request.task_kind,
                language: request.language.clone(),
                sample_size: request.sample_size,
                seed: request.seed,
                shared_languages: request.shared_languages.clone(),
                raters_per_task: None,
                created_at,
                task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
            },
            tasks,
            assignment: Assignment::new(),
        })
    }

    pub fn is_assigned(&self) -> bool {
        self.manifest.raters_per_task.is_some()
    }

    pub fn task(&self, id: &str) -> Option<&EvaluationTask> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    CorpusImported { corpus_id: String, corpus: Corpus },
    AnnotatorRegistered { annotator_id: String, role: Role },
    SessionCreated { session: ElicitationSession },
    SessionAdvanced { session_id: String, action: Action, at: DateTime<Utc> },
    TranslationSubmitted { session_id: String, unit: TranslationUnit, at: DateTime<Utc> },
    BatchCreated { batch: Batch },
    BatchAssigned { batch_id: String, raters_per_task: usize, assignment: Assignment },
    JudgmentSubmitted { judgment: Judgment },
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub seq: u64,
    pub event: Event,
}

/// Which labels feed the agreement matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaBasis {
    /// Blinded choices `1 | 2 | both` as the annotators saw them.
    #[default]
    Raw,
    /// Unblinded `storyboard | text | both`.
    Resolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    pub basis: KappaBasis,
    pub items: usize,
    pub raters: usize,
    /// Tasks left out because they do not yet have every rating.
    pub incomplete_tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TallyReport {
    pub tally: PreferenceTally,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    corpora: BTreeMap<String, Corpus>,
    annotators: BTreeMap<String, Role>,
    sessions: BTreeMap<String, ElicitationSession>,
    session_units: BTreeMap<String, Vec<String>>,
    batches: BTreeMap<String, Batch>,
    // task id -> batch id
    task_batches: BTreeMap<String, String>,
    // task id -> annotator -> judgment
    judgments: BTreeMap<String, BTreeMap<String, Judgment>>,
    applied: BTreeSet<String>,
    last_seq: u64,
}

/// Parameters of a batch request against a stored corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub corpus_id: String,
    pub request: TaskRequest,
}

impl State {
    pub fn new() -> Self {
        State::default()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn has_applied(&self, event_id: &str) -> bool {
        self.applied.contains(event_id)
    }

    pub fn corpora(&self) -> &BTreeMap<String, Corpus> {
        &self.corpora
    }

    pub fn corpus(&self, id: &str) -> Result<&Corpus, ProtocolError> {
        self.corpora.get(id).ok_or_else(|| ProtocolError::UnknownCorpus(id.into()))
    }

    pub fn role(&self, annotator_id: &str) -> Option<Role> {
        self.annotators.get(annotator_id).copied()
    }

    pub fn session(&self, id: &str) -> Result<&ElicitationSession, ProtocolError> {
        self.sessions.get(id).ok_or_else(|| ProtocolError::UnknownSession(id.into()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ElicitationSession> {
        self.sessions.values()
    }

    pub fn batch(&self, id: &str) -> Result<&Batch, ProtocolError> {
        self.batches.get(id).ok_or_else(|| ProtocolError::UnknownBatch(id.into()))
    }

    pub fn batches(&self) -> impl Iterator<Item = &Batch> {
        self.batches.values()
    }

    pub fn task(&self, id: &str) -> Result<(&Batch, &EvaluationTask), ProtocolError> {
        let batch = self
            .task_batches
            .get(id)
            .and_then(|b| self.batches.get(b))
            .ok_or_else(|| ProtocolError::UnknownTask(id.into()))?;
        let task = batch.task(id).ok_or_else(|| ProtocolError::UnknownTask(id.into()))?;
        Ok((batch, task))
    }

    pub fn judgments_for(&self, task_id: &str) -> impl Iterator<Item = &Judgment> {
        self.judgments.get(task_id).into_iter().flat_map(|m| m.values())
    }

    // ---- commands ----

    pub fn prepare_import(&self, corpus_id: Option<String>, corpus: Corpus) -> Result<Event, ProtocolError> {
        let corpus_id = corpus_id.unwrap_or_else(|| format!("c{:03}", self.corpora.len() + 1));
        if self.corpora.contains_key(&corpus_id) {
            return Err(ProtocolError::CorpusExists(corpus_id));
        }
        Ok(Event::CorpusImported { corpus_id, corpus })
    }

    /// `None` when the annotator is already registered with this role.
    pub fn prepare_registration(&self, annotator_id: &str, role: Role) -> Option<Event> {
        (self.role(annotator_id) != Some(role))
            .then(|| Event::AnnotatorRegistered { annotator_id: annotator_id.into(), role })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn prepare_session(
        &self,
        annotator_id: &str,
        corpus_id: &str,
        storyboard_id: &str,
        language: LanguageCode,
        track: Track,
        gap_seconds: Option<u64>,
        now: DateTime<Utc>,
    ) -> Result<Event, ProtocolError> {
        if !self.annotators.contains_key(annotator_id) {
            return Err(ProtocolError::UnknownAnnotator(annotator_id.into()));
        }
        let corpus = self.corpus(corpus_id)?;
        if corpus.storyboard(storyboard_id).is_none() {
            return Err(ProtocolError::UnknownStoryboard(storyboard_id.into()));
        }
        if !corpus.declares(&language) {
            return Err(crate::corpus::CorpusError::UnknownLanguage(language).into());
        }
        let duplicate = self.sessions.values().any(|s| {
            s.is_open()
                && s.annotator_id == annotator_id
                && s.corpus_id == corpus_id
                && s.storyboard_id == storyboard_id
                && s.track == track
        });
        if duplicate {
            return Err(ProtocolError::DuplicateSession {
                annotator_id: annotator_id.into(),
                storyboard_id: storyboard_id.into(),
                track,
            });
        }
        let id = format!("s{:05}", self.sessions.len() + 1);
        let session =
            ElicitationSession::new(id, annotator_id, corpus_id, storyboard_id, language, track, gap_seconds, now);
        Ok(Event::SessionCreated { session })
    }

    pub fn prepare_advance(&self, session_id: &str, action: Action, now: DateTime<Utc>) -> Result<Event, ProtocolError> {
        self.session(session_id)?.step(action, now)?;
        Ok(Event::SessionAdvanced { session_id: session_id.into(), action, at: now })
    }

    pub fn prepare_translation(
        &self,
        session_id: &str,
        scene_index: u32,
        text: &str,
        now: DateTime<Utc>,
    ) -> Result<Event, ProtocolError> {
        let session = self.session(session_id)?;
        session.accept_translation()?;
        if text.trim().is_empty() {
            return Err(ProtocolError::EmptyText);
        }
        let corpus = self.corpus(&session.corpus_id)?;
        if corpus.scene(&session.storyboard_id, scene_index).is_none() {
            return Err(ProtocolError::UnknownScene { storyboard_id: session.storyboard_id.clone(), scene_index });
        }
        let mut n = self.session_units.get(session_id).map_or(0, Vec::len) + 1;
        let mut id = format!("{session_id}-{n:03}");
        while corpus.unit(&id).is_some() {
            n += 1;
            id = format!("{session_id}-{n:03}");
        }
        let unit = TranslationUnit {
            id,
            language: session.language.clone(),
            storyboard_id: session.storyboard_id.clone(),
            scene_index,
            method: session.track.method(),
            translator_id: session.annotator_id.clone(),
            text: text.into(),
        };
        Ok(Event::TranslationSubmitted { session_id: session_id.into(), unit, at: now })
    }

    pub fn prepare_batch(&self, spec: &BatchSpec, now: DateTime<Utc>) -> Result<Event, ProtocolError> {
        let corpus = self.corpus(&spec.corpus_id)?;
        let batch_id = format!("b{:04}", self.batches.len() + 1);
        let batch = Batch::generate(&batch_id, &spec.corpus_id, corpus, &spec.request, now)?;
        Ok(Event::BatchCreated { batch })
    }

    /// Registered evaluators, in id order.
    pub fn evaluators(&self) -> Vec<String> {
        self.annotators.iter().filter(|(_, r)| **r == Role::Evaluator).map(|(a, _)| a.clone()).collect()
    }

    /// Assigns (or reassigns, while nothing is judged) a batch. `None` takes
    /// every registered evaluator.
    pub fn prepare_assignment(
        &self,
        batch_id: &str,
        raters_per_task: usize,
        annotators: Option<&[String]>,
    ) -> Result<Event, ProtocolError> {
        let batch = self.batch(batch_id)?;
        if batch.tasks.iter().any(|t| self.judgments.contains_key(&t.id)) {
            return Err(ProtocolError::AlreadyJudged(batch_id.into()));
        }
        let annotators = match annotators {
            Some(list) => {
                if let Some(unknown) = list.iter().find(|a| !self.annotators.contains_key(*a)) {
                    return Err(ProtocolError::UnknownAnnotator(unknown.clone()));
                }
                list.to_vec()
            }
            None => self.evaluators(),
        };
        let corpus = self.corpus(&batch.manifest.corpus_id)?;
        let assignment = assign_tasks(&batch.tasks, &annotators, raters_per_task, corpus)?;
        Ok(Event::BatchAssigned { batch_id: batch_id.into(), raters_per_task, assignment })
    }

    pub fn prepare_judgment(
        &self,
        task_id: &str,
        annotator_id: &str,
        raw_choice: RawChoice,
        now: DateTime<Utc>,
    ) -> Result<Event, ProtocolError> {
        let judgment =
            Judgment { task_id: task_id.into(), annotator_id: annotator_id.into(), raw_choice, submitted_at: now };
        self.check_judgment(&judgment)?;
        Ok(Event::JudgmentSubmitted { judgment })
    }

    fn check_judgment(&self, judgment: &Judgment) -> Result<(), ProtocolError> {
        let (batch, _) = self.task(&judgment.task_id)?;
        let assigned = batch
            .assignment
            .get(&judgment.task_id)
            .is_some_and(|raters| raters.contains(&judgment.annotator_id));
        if !assigned {
            return Err(ProtocolError::NotAssigned {
                task_id: judgment.task_id.clone(),
                annotator_id: judgment.annotator_id.clone(),
            });
        }
        if self.judgments.get(&judgment.task_id).is_some_and(|m| m.contains_key(&judgment.annotator_id)) {
            return Err(ProtocolError::DuplicateJudgment {
                task_id: judgment.task_id.clone(),
                annotator_id: judgment.annotator_id.clone(),
            });
        }
        Ok(())
    }

    // ---- replay ----

    /// Applies a persisted event. Returns `false` if the event id was seen
    /// before. Fails only if the event contradicts the current state, which
    /// means the log was not produced by this state machine.
    pub fn apply(&mut self, record: &EventRecord) -> Result<bool, ProtocolError> {
        if self.applied.contains(&record.id) {
            return Ok(false);
        }
        match &record.event {
            Event::CorpusImported { corpus_id, corpus } => {
                if self.corpora.contains_key(corpus_id) {
                    return Err(ProtocolError::CorpusExists(corpus_id.clone()));
                }
                self.corpora.insert(corpus_id.clone(), corpus.clone());
            }
            Event::AnnotatorRegistered { annotator_id, role } => {
                self.annotators.insert(annotator_id.clone(), *role);
            }
            Event::SessionCreated { session } => {
                self.sessions.insert(session.id.clone(), session.clone());
            }
            Event::SessionAdvanced { session_id, action, at } => {
                let next = self.session(session_id)?.step(*action, *at)?;
                self.sessions.insert(session_id.clone(), next);
            }
            Event::TranslationSubmitted { session_id, unit, .. } => {
                let session = self.session(session_id)?;
                session.accept_translation()?;
                let corpus_id = session.corpus_id.clone();
                self.corpora
                    .get_mut(&corpus_id)
                    .ok_or(ProtocolError::UnknownCorpus(corpus_id))?
                    .add_unit(unit.clone())?;
                self.session_units.entry(session_id.clone()).or_default().push(unit.id.clone());
            }
            Event::BatchCreated { batch } => {
                let id = batch.manifest.batch_id.clone();
                for task in &batch.tasks {
                    self.task_batches.insert(task.id.clone(), id.clone());
                }
                self.batches.insert(id, batch.clone());
            }
            Event::BatchAssigned { batch_id, raters_per_task, assignment } => {
                let batch = self.batches.get_mut(batch_id).ok_or_else(|| ProtocolError::UnknownBatch(batch_id.clone()))?;
                batch.manifest.raters_per_task = Some(*raters_per_task);
                batch.assignment = assignment.clone();
            }
            Event::JudgmentSubmitted { judgment } => {
                self.check_judgment(judgment)?;
                self.judgments
                    .entry(judgment.task_id.clone())
                    .or_default()
                    .insert(judgment.annotator_id.clone(), judgment.clone());
            }
        }
        self.applied.insert(record.id.clone());
        self.last_seq = self.last_seq.max(record.seq);
        Ok(true)
    }

    // ---- annotator views ----

    pub fn reading_payload(&self, session_id: &str) -> Result<ReadingPayload, ProtocolError> {
        let session = self.session(session_id)?;
        let storyboard = self
            .corpus(&session.corpus_id)?
            .storyboard(&session.storyboard_id)
            .ok_or_else(|| ProtocolError::UnknownStoryboard(session.storyboard_id.clone()))?;
        Ok(ReadingPayload::new(session, storyboard))
    }

    /// First scene of the session's storyboard without a translation from
    /// this session. Only available while annotating.
    pub fn next_scene(&self, session_id: &str) -> Result<Option<ScenePayload>, ProtocolError> {
        let session = self.session(session_id)?;
        if session.state != SessionState::Annotating {
            return Err(ProtocolError::InvalidTransition {
                track: session.track,
                state: session.state,
                action: Action::SubmitTranslation,
            });
        }
        let corpus = self.corpus(&session.corpus_id)?;
        let storyboard = corpus
            .storyboard(&session.storyboard_id)
            .ok_or_else(|| ProtocolError::UnknownStoryboard(session.storyboard_id.clone()))?;
        let done: BTreeSet<u32> = self
            .session_units
            .get(session_id)
            .into_iter()
            .flatten()
            .filter_map(|id| corpus.unit(id))
            .map(|u| u.scene_index)
            .collect();
        Ok(storyboard
            .scenes
            .iter()
            .find(|s| !done.contains(&s.index))
            .and_then(|s| ScenePayload::for_session(session, storyboard, s.index)))
    }

    /// Next assigned, unjudged task for an evaluator, in batch and task
    /// order.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<TaskPayload>, ProtocolError> {
        for batch in self.batches.values() {
            for task in &batch.tasks {
                let assigned = batch.assignment.get(&task.id).is_some_and(|r| r.iter().any(|a| a == annotator_id));
                let judged = self.judgments.get(&task.id).is_some_and(|m| m.contains_key(annotator_id));
                if assigned && !judged {
                    let corpus = self.corpus(&batch.manifest.corpus_id)?;
                    return TaskPayload::new(task, corpus).map(Some);
                }
            }
        }
        Ok(None)
    }

    // ---- reports ----

    /// Every judgment of a batch with its task, in task order.
    pub fn batch_judgments(&self, batch_id: &str) -> Result<Vec<(&EvaluationTask, &Judgment)>, ProtocolError> {
        let batch = self.batch(batch_id)?;
        Ok(batch
            .tasks
            .iter()
            .flat_map(|t| self.judgments_for(&t.id).map(move |j| (t, j)))
            .collect())
    }

    pub fn tally(&self, batch_id: &str) -> Result<TallyReport, ProtocolError> {
        let mut tally = PreferenceTally::default();
        for (task, judgment) in self.batch_judgments(batch_id)? {
            tally.record(unblind(task, judgment.raw_choice));
        }
        let p_value = randomness_test(&tally).ok();
        Ok(TallyReport { tally, p_value })
    }

    pub fn kappa(&self, batch_id: &str, basis: KappaBasis) -> Result<Result<KappaReport, AgreementError>, ProtocolError> {
        let batch = self.batch(batch_id)?;
        let Some(raters) = batch.manifest.raters_per_task else {
            return Ok(Err(AgreementError::NoItems));
        };
        let mut rows = Vec::new();
        let mut incomplete = 0;
        for task in &batch.tasks {
            let labels: Vec<usize> = self
                .judgments_for(&task.id)
                .map(|j| match basis {
                    KappaBasis::Raw => j.raw_choice.index(),
                    KappaBasis::Resolved => resolved_index(unblind(task, j.raw_choice)),
                })
                .collect();
            if labels.len() == raters {
                rows.push(labels);
            } else {
                incomplete += 1;
            }
        }
        Ok(RatingsMatrix::from_labels(rows, 3).and_then(|m| {
            let kappa = fleiss_kappa(&m)?;
            Ok(KappaReport { kappa, basis, items: m.n_items(), raters: m.n_raters(), incomplete_tasks: incomplete })
        }))
    }
}

fn resolved_index(p: Preference) -> usize {
    match p {
        Preference::Storyboard => 0,
        Preference::Text => 1,
        Preference::Both => 2,
    }
}
