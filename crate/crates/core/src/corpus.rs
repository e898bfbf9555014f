//! Storyboards, scenes and the translations collected for them.
//!
//! A [`Corpus`] is built record by record. Structural problems that make the
//! corpus unusable (duplicate ids, units pointing at scenes that do not
//! exist, undeclared languages) are rejected on insertion; content problems
//! (empty text, gaps in scene numbering, unpaired scenes) are left for
//! [`validate_corpus`] to report.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfc, UnicodeNormalization};

/// ISO 639-3 style language code (`hau`, `ibb`, `swh`, `yor`, ...).
///
/// The set of accepted codes is configuration carried by the corpus, not a
/// fixed list.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: impl Into<String>) -> Self {
        LanguageCode(code.into().trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LanguageCode {
    fn from(s: &str) -> Self {
        LanguageCode::new(s)
    }
}

/// How a translation was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Control track: direct translation of the English sentence.
    Text,
    /// Treatment track: description written from the scene image alone.
    Storyboard,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Text, Method::Storyboard];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Text => "text",
            Method::Storyboard => "storyboard",
        }
    }

    pub fn other(self) -> Method {
        match self {
            Method::Text => Method::Storyboard,
            Method::Storyboard => Method::Text,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Method::Text),
            "storyboard" => Ok(Method::Storyboard),
            other => Err(CorpusError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub storyboard_id: String,
    pub index: u32,
    pub english_text: String,
    pub image_ref: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Storyboard {
    pub id: String,
    pub title: String,
    pub scenes: Vec<Scene>,
}

impl Storyboard {
    pub fn scene(&self, index: u32) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.index == index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationUnit {
    pub id: String,
    pub language: LanguageCode,
    pub storyboard_id: String,
    pub scene_index: u32,
    pub method: Method,
    pub translator_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate storyboard id `{0}`")]
    DuplicateStoryboard(String),
    #[error("duplicate scene {index} in storyboard `{storyboard_id}`")]
    DuplicateScene { storyboard_id: String, index: u32 },
    #[error("scene {index} refers to unknown storyboard `{storyboard_id}`")]
    UnknownStoryboard { storyboard_id: String, index: u32 },
    #[error("duplicate unit id `{0}`")]
    DuplicateUnit(String),
    #[error("unit `{unit_id}` refers to missing scene {scene_index} of storyboard `{storyboard_id}`")]
    DanglingReference { unit_id: String, storyboard_id: String, scene_index: u32 },
    #[error("unit `{unit_id}` uses undeclared language `{language}`")]
    UndeclaredLanguage { unit_id: String, language: LanguageCode },
    #[error("unknown language `{0}`")]
    UnknownLanguage(LanguageCode),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
}

fn nfc(s: &str) -> String {
    if is_nfc(s) {
        s.to_string()
    } else {
        s.nfc().collect()
    }
}

/// Storyboards plus every translation unit collected for them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "CorpusParts")]
pub struct Corpus {
    languages: BTreeSet<LanguageCode>,
    storyboards: Vec<Storyboard>,
    units: Vec<TranslationUnit>,
    #[serde(skip)]
    storyboard_index: BTreeMap<String, usize>,
    #[serde(skip)]
    unit_index: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct CorpusParts {
    languages: BTreeSet<LanguageCode>,
    storyboards: Vec<Storyboard>,
    units: Vec<TranslationUnit>,
}

impl From<CorpusParts> for Corpus {
    fn from(parts: CorpusParts) -> Self {
        let mut corpus = Corpus {
            languages: parts.languages,
            storyboards: parts.storyboards,
            units: parts.units,
            ..Default::default()
        };
        corpus.reindex();
        corpus
    }
}

impl Corpus {
    pub fn new<I, L>(languages: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: Into<LanguageCode>,
    {
        Corpus { languages: languages.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    /// Rebuilds a corpus from its parts, re-running every insertion check.
    pub fn from_parts(
        languages: impl IntoIterator<Item = LanguageCode>,
        storyboards: impl IntoIterator<Item = Storyboard>,
        units: impl IntoIterator<Item = TranslationUnit>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new(languages);
        for sb in storyboards {
            corpus.add_storyboard(sb)?;
        }
        for unit in units {
            corpus.add_unit(unit)?;
        }
        Ok(corpus)
    }

    fn reindex(&mut self) {
        self.storyboard_index = self.storyboards.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        self.unit_index = self.units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
    }

    pub fn languages(&self) -> &BTreeSet<LanguageCode> {
        &self.languages
    }

    pub fn declares(&self, language: &LanguageCode) -> bool {
        self.languages.contains(language)
    }

    pub fn storyboards(&self) -> &[Storyboard] {
        &self.storyboards
    }

    pub fn units(&self) -> &[TranslationUnit] {
        &self.units
    }

    pub fn storyboard(&self, id: &str) -> Option<&Storyboard> {
        self.storyboard_index.get(id).map(|&i| &self.storyboards[i])
    }

    pub fn scene(&self, storyboard_id: &str, index: u32) -> Option<&Scene> {
        self.storyboard(storyboard_id).and_then(|s| s.scene(index))
    }

    pub fn unit(&self, id: &str) -> Option<&TranslationUnit> {
        self.unit_index.get(id).map(|&i| &self.units[i])
    }

    pub fn scenes(&self) -> impl Iterator<Item = &Scene> {
        self.storyboards.iter().flat_map(|s| s.scenes.iter())
    }

    /// Adds a storyboard. Scenes are sorted by index and text is NFC-normalized.
    pub fn add_storyboard(&mut self, mut storyboard: Storyboard) -> Result<(), CorpusError> {
        if self.storyboard_index.contains_key(&storyboard.id) {
            return Err(CorpusError::DuplicateStoryboard(storyboard.id));
        }
        storyboard.title = nfc(&storyboard.title);
        let mut seen = BTreeSet::new();
        for scene in &mut storyboard.scenes {
            if scene.storyboard_id != storyboard.id {
                return Err(CorpusError::UnknownStoryboard {
                    storyboard_id: scene.storyboard_id.clone(),
                    index: scene.index,
                });
            }
            if !seen.insert(scene.index) {
                return Err(CorpusError::DuplicateScene { storyboard_id: storyboard.id.clone(), index: scene.index });
            }
            scene.english_text = nfc(&scene.english_text);
        }
        storyboard.scenes.sort_by_key(|s| s.index);
        self.storyboard_index.insert(storyboard.id.clone(), self.storyboards.len());
        self.storyboards.push(storyboard);
        Ok(())
    }

    /// Adds a translation unit after checking id uniqueness, the scene
    /// reference and the declared language set. Text is NFC-normalized.
    pub fn add_unit(&mut self, mut unit: TranslationUnit) -> Result<(), CorpusError> {
        if self.unit_index.contains_key(&unit.id) {
            return Err(CorpusError::DuplicateUnit(unit.id));
        }
        if !self.languages.contains(&unit.language) {
            return Err(CorpusError::UndeclaredLanguage { unit_id: unit.id, language: unit.language });
        }
        if self.scene(&unit.storyboard_id, unit.scene_index).is_none() {
            return Err(CorpusError::DanglingReference {
                unit_id: unit.id,
                storyboard_id: unit.storyboard_id,
                scene_index: unit.scene_index,
            });
        }
        unit.text = nfc(&unit.text);
        self.unit_index.insert(unit.id.clone(), self.units.len());
        self.units.push(unit);
        Ok(())
    }

    pub fn units_for<'a>(
        &'a self,
        language: &'a LanguageCode,
        method: Method,
    ) -> impl Iterator<Item = &'a TranslationUnit> + 'a {
        self.units.iter().filter(move |u| &u.language == language && u.method == method)
    }
}

/// Number of units per (language, method).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    cells: BTreeMap<LanguageCode, [usize; 2]>,
}

impl CountsTable {
    pub fn get(&self, language: &LanguageCode, method: Method) -> usize {
        self.cells.get(language).map_or(0, |c| c[method as usize])
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageCode> {
        self.cells.keys()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&LanguageCode, usize, usize)> {
        self.cells.iter().map(|(l, c)| (l, c[Method::Text as usize], c[Method::Storyboard as usize]))
    }

    pub fn method_total(&self, method: Method) -> usize {
        self.cells.values().map(|c| c[method as usize]).sum()
    }

    pub fn total(&self) -> usize {
        self.cells.values().map(|c| c[0] + c[1]).sum()
    }
}

/// Exact per-(language, method) counts. Every declared language gets a row,
/// even when it has no units.
pub fn corpus_counts(corpus: &Corpus) -> CountsTable {
    let mut cells: BTreeMap<LanguageCode, [usize; 2]> =
        corpus.languages.iter().map(|l| (l.clone(), [0, 0])).collect();
    for unit in &corpus.units {
        cells.entry(unit.language.clone()).or_default()[unit.method as usize] += 1;
    }
    CountsTable { cells }
}

/// The units of one language collected for one scene by both methods.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePairSet<'a> {
    pub storyboard_id: &'a str,
    pub scene_index: u32,
    pub language: &'a LanguageCode,
    pub text_units: Vec<&'a TranslationUnit>,
    pub storyboard_units: Vec<&'a TranslationUnit>,
}

impl ScenePairSet<'_> {
    pub fn units(&self, method: Method) -> &[&TranslationUnit] {
        match method {
            Method::Text => &self.text_units,
            Method::Storyboard => &self.storyboard_units,
        }
    }
}

// (text, storyboard)
type MethodUnits<'a> = (Vec<&'a TranslationUnit>, Vec<&'a TranslationUnit>);

/// Scenes of `language` with at least one unit from each method, ordered by
/// (storyboard id, scene index). Units keep their corpus order.
pub fn align_by_scene<'a>(
    corpus: &'a Corpus,
    language: &LanguageCode,
) -> Result<Vec<ScenePairSet<'a>>, CorpusError> {
    let language = corpus.languages.get(language).ok_or_else(|| CorpusError::UnknownLanguage(language.clone()))?;
    let mut by_scene: BTreeMap<(&str, u32), MethodUnits<'a>> = BTreeMap::new();
    for unit in corpus.units.iter().filter(|u| &u.language == language) {
        let entry = by_scene.entry((unit.storyboard_id.as_str(), unit.scene_index)).or_default();
        match unit.method {
            Method::Text => entry.0.push(unit),
            Method::Storyboard => entry.1.push(unit),
        }
    }
    Ok(by_scene
        .into_iter()
        .filter(|(_, (t, s))| !t.is_empty() && !s.is_empty())
        .map(|((storyboard_id, scene_index), (text_units, storyboard_units))| ScenePairSet {
            storyboard_id,
            scene_index,
            language,
            text_units,
            storyboard_units,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    EmptyEnglishText,
    EmptyStoryboard,
    SceneNumbering,
    EmptyUnitText,
    DanglingReference,
    UndeclaredLanguage,
    DuplicateId,
    MissingImage,
    UnpairedScene,
    DuplicateAlternative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, kind: FindingKind, message: String) {
        self.errors.push(Finding { kind, message });
    }

    fn warn(&mut self, kind: FindingKind, message: String) {
        self.warnings.push(Finding { kind, message });
    }
}

/// Checks content invariants. `image_exists` decides whether an image
/// reference resolves; a missing image is a warning only.
pub fn validate_corpus(corpus: &Corpus, image_exists: impl Fn(&str) -> bool) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut storyboard_ids = BTreeSet::new();
    for sb in &corpus.storyboards {
        if !storyboard_ids.insert(sb.id.as_str()) {
            report.error(FindingKind::DuplicateId, format!("storyboard id `{}` appears more than once", sb.id));
        }
        if sb.scenes.is_empty() {
            report.error(FindingKind::EmptyStoryboard, format!("storyboard `{}` has no scenes", sb.id));
        }
        for (expected, scene) in (1u32..).zip(&sb.scenes) {
            if scene.index != expected {
                report.error(
                    FindingKind::SceneNumbering,
                    format!("storyboard `{}`: expected scene {expected}, found {}", sb.id, scene.index),
                );
                break;
            }
        }
        for scene in &sb.scenes {
            if scene.english_text.trim().is_empty() {
                report.error(
                    FindingKind::EmptyEnglishText,
                    format!("storyboard `{}` scene {} has empty english_text", sb.id, scene.index),
                );
            }
            if !image_exists(&scene.image_ref) {
                report.warn(
                    FindingKind::MissingImage,
                    format!("storyboard `{}` scene {}: image `{}` not found", sb.id, scene.index, scene.image_ref),
                );
            }
        }
    }

    let mut unit_ids = BTreeSet::new();
    // (storyboard, scene, language) -> methods present
    let mut methods: BTreeMap<(&str, u32, &LanguageCode), [bool; 2]> = BTreeMap::new();
    let mut alternatives: BTreeMap<(&str, u32, &LanguageCode, Method, &str, &str), usize> = BTreeMap::new();
    for unit in &corpus.units {
        if !unit_ids.insert(unit.id.as_str()) {
            report.error(FindingKind::DuplicateId, format!("unit id `{}` appears more than once", unit.id));
        }
        if unit.text.trim().is_empty() {
            report.error(FindingKind::EmptyUnitText, format!("unit `{}` has empty text", unit.id));
        }
        if !corpus.languages.contains(&unit.language) {
            report.error(
                FindingKind::UndeclaredLanguage,
                format!("unit `{}` uses undeclared language `{}`", unit.id, unit.language),
            );
        }
        if corpus.scene(&unit.storyboard_id, unit.scene_index).is_none() {
            report.error(
                FindingKind::DanglingReference,
                format!(
                    "unit `{}` refers to missing scene {} of storyboard `{}`",
                    unit.id, unit.scene_index, unit.storyboard_id
                ),
            );
            continue;
        }
        methods.entry((&unit.storyboard_id, unit.scene_index, &unit.language)).or_default()[unit.method as usize] =
            true;
        *alternatives
            .entry((
                &unit.storyboard_id,
                unit.scene_index,
                &unit.language,
                unit.method,
                &unit.translator_id,
                unit.text.as_str(),
            ))
            .or_default() += 1;
    }

    for ((sb, scene, lang), present) in &methods {
        if present[0] != present[1] {
            let only = if present[0] { Method::Text } else { Method::Storyboard };
            report.warn(
                FindingKind::UnpairedScene,
                format!("unpaired scene: storyboard `{sb}` scene {scene} ({lang}) has only {only} units"),
            );
        }
    }
    for ((sb, scene, lang, method, translator, _), n) in &alternatives {
        if *n > 1 {
            report.warn(
                FindingKind::DuplicateAlternative,
                format!(
                    "storyboard `{sb}` scene {scene} ({lang}, {method}): translator `{translator}` submitted the same text {n} times"
                ),
            );
        }
    }
    report
}
