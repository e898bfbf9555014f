//! Annotator-facing payloads.
//!
//! These are the only shapes the service sends to translators and
//! evaluators. None of them carries a method label, unit id or storyboard
//! id, and treatment-track scene payloads have no English text.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::session::{ElicitationSession, Track};
use super::tasks::{EvaluationTask, TaskKind};
use super::ProtocolError;
use crate::corpus::{Corpus, Storyboard};

pub const CHOICE_LABELS: [&str; 3] = ["Sentence 1", "Sentence 2", "Both"];

/// One scene to annotate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenePayload {
    pub session_id: String,
    pub scene_index: u32,
    pub image_ref: String,
    /// Present for the control track only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub english_text: Option<String>,
}

impl ScenePayload {
    pub fn for_session(session: &ElicitationSession, storyboard: &Storyboard, scene_index: u32) -> Option<Self> {
        let scene = storyboard.scene(scene_index)?;
        Some(ScenePayload {
            session_id: session.id.clone(),
            scene_index,
            image_ref: scene.image_ref.clone(),
            english_text: match session.track {
                Track::ControlText => Some(scene.english_text.clone()),
                Track::TreatmentStoryboard => None,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingPanel {
    pub scene_index: u32,
    pub image_ref: String,
    pub english_text: String,
}

/// The whole storyboard with its English sentences, shown once in the
/// reading phase of the treatment track.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingPayload {
    pub session_id: String,
    pub title: String,
    pub panels: Vec<ReadingPanel>,
}

impl ReadingPayload {
    pub fn new(session: &ElicitationSession, storyboard: &Storyboard) -> Self {
        ReadingPayload {
            session_id: session.id.clone(),
            title: storyboard.title.clone(),
            panels: storyboard
                .scenes
                .iter()
                .map(|s| ReadingPanel {
                    scene_index: s.index,
                    image_ref: s.image_ref.clone(),
                    english_text: s.english_text.clone(),
                })
                .collect(),
        }
    }
}

/// A blinded pair as presented to an evaluator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub task_kind: TaskKind,
    pub language: String,
    pub guideline: String,
    /// Accuracy tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sentence: Option<String>,
    pub sentence_1: String,
    pub sentence_2: String,
    pub choices: Vec<String>,
}

impl TaskPayload {
    pub fn new(task: &EvaluationTask, corpus: &Corpus) -> Result<Self, ProtocolError> {
        let unit_text = |id: &str| {
            corpus.unit(id).map(|u| u.text.clone()).ok_or_else(|| ProtocolError::UnknownUnit(id.into()))
        };
        let source_sentence = if task.include_source_english {
            let scene = corpus.scene(&task.storyboard_id, task.scene_index).ok_or_else(|| {
                ProtocolError::UnknownScene { storyboard_id: task.storyboard_id.clone(), scene_index: task.scene_index }
            })?;
            Some(scene.english_text.clone())
        } else {
            None
        };
        Ok(TaskPayload {
            task_id: task.id.clone(),
            task_kind: task.task_kind,
            language: task.language.as_str().into(),
            guideline: task.task_kind.guideline().into(),
            source_sentence,
            sentence_1: unit_text(&task.slot1_unit_id)?,
            sentence_2: unit_text(&task.slot2_unit_id)?,
            choices: CHOICE_LABELS.iter().map(|&c| c.into()).collect(),
        })
    }
}
