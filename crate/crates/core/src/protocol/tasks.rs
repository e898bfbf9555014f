//! Blinded pairwise evaluation tasks: sampling and rater assignment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::corpus::{align_by_scene, Corpus, LanguageCode, Method, ScenePairSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Accuracy,
    Fluency,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Accuracy => "accuracy",
            TaskKind::Fluency => "fluency",
        }
    }

    /// Instructions shown with every task of this kind.
    pub fn guideline(self) -> &'static str {
        match self {
            TaskKind::Accuracy => {
                "Select which sentence is more adequate (i.e., more accurate) for translating the English sentence. \
                 A better translation should include as much content from the English sentence as possible, \
                 without adding information not present in the original sentence. \
                 Disregard the translations of named entities in your judgment."
            }
            TaskKind::Fluency => {
                "Select which sentence is more fluent (i.e., more natural). \
                 A better sentence should be the one that is more natural and grammatical."
            }
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(TaskKind::Accuracy),
            "fluency" => Ok(TaskKind::Fluency),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// Hidden mapping from presentation slot to method. Never leaves admin
/// surfaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blinding {
    pub slot1: Method,
}

impl Blinding {
    pub fn slot2(self) -> Method {
        self.slot1.other()
    }

    pub fn method_of(self, slot: u8) -> Option<Method> {
        match slot {
            1 => Some(self.slot1),
            2 => Some(self.slot2()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationTask {
    pub id: String,
    pub task_kind: TaskKind,
    pub language: LanguageCode,
    pub storyboard_id: String,
    pub scene_index: u32,
    pub slot1_unit_id: String,
    pub slot2_unit_id: String,
    pub blinding: Blinding,
    pub include_source_english: bool,
}

impl EvaluationTask {
    pub fn unit_for(&self, method: Method) -> &str {
        if self.blinding.slot1 == method {
            &self.slot1_unit_id
        } else {
            &self.slot2_unit_id
        }
    }
}

/// Parameters of one evaluation batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub language: LanguageCode,
    pub task_kind: TaskKind,
    pub sample_size: usize,
    pub seed: u64,
    /// Restrict sampling to scenes that are paired in all of these
    /// languages as well. Batches for different languages drawn with the
    /// same seed and the same set then cover the same scenes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shared_languages: Vec<LanguageCode>,
}

impl TaskRequest {
    pub fn new(language: LanguageCode, task_kind: TaskKind, sample_size: usize, seed: u64) -> Self {
        TaskRequest { language, task_kind, sample_size, seed, shared_languages: Vec::new() }
    }
}

fn eligible_scenes<'a>(corpus: &'a Corpus, request: &TaskRequest) -> Result<Vec<ScenePairSet<'a>>, ProtocolError> {
    let pairs = align_by_scene(corpus, &request.language)?;
    if request.shared_languages.is_empty() {
        return Ok(pairs);
    }
    let mut common: Option<BTreeSet<(String, u32)>> = None;
    for language in &request.shared_languages {
        let keys: BTreeSet<(String, u32)> =
            align_by_scene(corpus, language)?.iter().map(|p| (String::from(p.storyboard_id), p.scene_index)).collect();
        common = Some(match common {
            None => keys,
            Some(prev) => prev.intersection(&keys).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    Ok(pairs.into_iter().filter(|p| common.contains(&(String::from(p.storyboard_id), p.scene_index))).collect())
}

/// Draws `sample_size` paired scenes uniformly without replacement, one text
/// and one storyboard unit per scene, and a random slot order per task.
///
/// The draw is a pure function of the corpus content and the request: the
/// generator is ChaCha20 seeded from `request.seed`. Scenes are drawn first,
/// so the scene sample depends only on the eligible scene list.
pub fn generate_tasks(
    corpus: &Corpus,
    request: &TaskRequest,
    id_prefix: &str,
) -> Result<Vec<EvaluationTask>, ProtocolError> {
    if request.sample_size == 0 {
        return Err(ProtocolError::EmptySample);
    }
    let scenes = eligible_scenes(corpus, request)?;
    if scenes.len() < request.sample_size {
        return Err(ProtocolError::InsufficientPairedScenes {
            language: request.language.clone(),
            needed: request.sample_size,
            available: scenes.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(request.seed);
    let picks = index::sample(&mut rng, scenes.len(), request.sample_size).into_vec();

    let tasks = picks
        .into_iter()
        .enumerate()
        .map(|(i, pick)| {
            let scene = &scenes[pick];
            let text = scene.text_units[rng.random_range(0..scene.text_units.len())];
            let story = scene.storyboard_units[rng.random_range(0..scene.storyboard_units.len())];
            let storyboard_first = rng.random_bool(0.5);
            let (slot1, slot2, slot1_method) = if storyboard_first {
                (story, text, Method::Storyboard)
            } else {
                (text, story, Method::Text)
            };
            EvaluationTask {
                id: format!("{id_prefix}-{:03}", i + 1),
                task_kind: request.task_kind,
                language: request.language.clone(),
                storyboard_id: String::from(scene.storyboard_id),
                scene_index: scene.scene_index,
                slot1_unit_id: slot1.id.clone(),
                slot2_unit_id: slot2.id.clone(),
                blinding: Blinding { slot1: slot1_method },
                include_source_english: request.task_kind == TaskKind::Accuracy,
            }
        })
        .collect();
    Ok(tasks)
}

/// Task id → the annotators rating it, in the order they were chosen.
pub type Assignment = BTreeMap<String, Vec<String>>;

/// Gives every task `raters_per_task` distinct annotators, never one who
/// wrote a unit shown in the task. Each task goes to the least-loaded
/// eligible annotators (ties broken by their order in `annotators`), which
/// keeps loads within one task of each other when nobody is excluded.
pub fn assign_tasks(
    tasks: &[EvaluationTask],
    annotators: &[String],
    raters_per_task: usize,
    corpus: &Corpus,
) -> Result<Assignment, ProtocolError> {
    if raters_per_task == 0 {
        return Err(ProtocolError::NoRaters);
    }
    let pool: Vec<&String> = {
        let mut seen = BTreeSet::new();
        annotators.iter().filter(|a| seen.insert(a.as_str())).collect()
    };
    if pool.len() < raters_per_task {
        return Err(ProtocolError::TooFewAnnotators { needed: raters_per_task, available: pool.len() });
    }
    let mut load = alloc::vec![0usize; pool.len()];
    let mut assignment = Assignment::new();
    for task in tasks {
        let authors: BTreeSet<&str> = [&task.slot1_unit_id, &task.slot2_unit_id]
            .into_iter()
            .map(|id| corpus.unit(id).map(|u| u.translator_id.as_str()).ok_or_else(|| ProtocolError::UnknownUnit(id.clone())))
            .collect::<Result<_, _>>()?;
        let mut eligible: Vec<usize> = (0..pool.len()).filter(|&i| !authors.contains(pool[i].as_str())).collect();
        if eligible.len() < raters_per_task {
            return Err(ProtocolError::InfeasibleAssignment {
                task_id: task.id.clone(),
                eligible: eligible.len(),
                needed: raters_per_task,
            });
        }
        eligible.sort_by_key(|&i| (load[i], i));
        let chosen: Vec<String> = eligible[..raters_per_task]
            .iter()
            .map(|&i| {
                load[i] += 1;
                pool[i].clone()
            })
            .collect();
        assignment.insert(task.id.clone(), chosen);
    }
    Ok(assignment)
}
