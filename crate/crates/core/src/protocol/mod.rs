//! The elicitation protocol.
//!
//! [`session`] holds the two collection tracks: a control track that goes
//! straight to annotation and a treatment track that reads the storyboard,
//! waits out a gap and then annotates from images alone. [`tasks`] builds
//! blinded pairwise evaluation batches from same-scene translations and
//! assigns them to raters; [`judgment`] resolves submitted choices back to
//! methods. [`payload`] defines everything an annotator is allowed to see.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, LanguageCode};

pub mod judgment;
pub mod payload;
pub mod session;
pub mod tasks;

pub use judgment::{unblind, Judgment, RawChoice};
pub use payload::{ReadingPayload, ScenePayload, TaskPayload};
pub use session::{Action, ElicitationSession, SessionState, Track, DEFAULT_GAP_SECONDS};
pub use tasks::{assign_tasks, generate_tasks, Assignment, Blinding, EvaluationTask, TaskKind, TaskRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Translator,
    Evaluator,
    Admin,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("cannot {action} a {track} session in state {state}")]
    InvalidTransition { track: Track, state: SessionState, action: Action },
    #[error("time gap not elapsed: {remaining_seconds} s remaining")]
    GapNotElapsed { remaining_seconds: u64 },
    #[error("annotator `{annotator_id}` already has an open {track} session for storyboard `{storyboard_id}`")]
    DuplicateSession { annotator_id: String, storyboard_id: String, track: Track },
    #[error("annotator `{0}` is not registered")]
    UnknownAnnotator(String),
    #[error("corpus `{0}` already exists")]
    CorpusExists(String),
    #[error("unknown corpus `{0}`")]
    UnknownCorpus(String),
    #[error("unknown storyboard `{0}`")]
    UnknownStoryboard(String),
    #[error("unknown scene {scene_index} of storyboard `{storyboard_id}`")]
    UnknownScene { storyboard_id: String, scene_index: u32 },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("batch `{0}` already has judgments")]
    AlreadyJudged(String),
    #[error("unknown batch `{0}`")]
    UnknownBatch(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("translation text is empty")]
    EmptyText,
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("{language}: need {needed} paired scenes, only {available} available ({} short)", .needed - .available)]
    InsufficientPairedScenes { language: LanguageCode, needed: usize, available: usize },
    #[error("raters per task must be at least 1")]
    NoRaters,
    #[error("need at least {needed} annotators, got {available}")]
    TooFewAnnotators { needed: usize, available: usize },
    #[error("task `{task_id}` has {eligible} eligible annotators, needs {needed}")]
    InfeasibleAssignment { task_id: String, eligible: usize, needed: usize },
    #[error("annotator `{annotator_id}` is not assigned task `{task_id}`")]
    NotAssigned { task_id: String, annotator_id: String },
    #[error("annotator `{annotator_id}` already judged task `{task_id}`")]
    DuplicateJudgment { task_id: String, annotator_id: String },
    #[error("annotator `{annotator_id}` lacks role {required:?}")]
    Forbidden { annotator_id: String, required: Role },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
