//! Corpus bundles on disk.
//!
//! A bundle is a directory holding
//!
//! * `storyboards.jsonl`: one `{"type":"storyboard","id","title"}` header per
//!   storyboard and one `{"type":"scene","storyboard_id","index","english_text","image_ref"}`
//!   record per scene, in any order;
//! * `units.jsonl`: one translation unit per line;
//! * `bundle.json` (optional): `{"languages":[{"code","name"}]}`. Without it
//!   the four default languages are declared.
//!
//! Image references are paths relative to the bundle directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use elicit_core::corpus::{Corpus, CorpusError, LanguageCode, Scene, Storyboard, TranslationUnit};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const STORYBOARDS_FILE: &str = "storyboards.jsonl";
pub const UNITS_FILE: &str = "units.jsonl";
pub const MANIFEST_FILE: &str = "bundle.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageInfo {
    pub code: LanguageCode,
    pub name: String,
}

pub fn default_languages() -> Vec<LanguageInfo> {
    [("hau", "Hausa"), ("ibb", "Ibibio"), ("swh", "Swahili"), ("yor", "Yorùbá")]
        .into_iter()
        .map(|(code, name)| LanguageInfo { code: code.into(), name: name.into() })
        .collect()
}

/// Display names in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Languages(pub Vec<LanguageInfo>);

impl Default for Languages {
    fn default() -> Self {
        Languages(default_languages())
    }
}

impl Languages {
    pub fn name<'a>(&'a self, code: &'a LanguageCode) -> &'a str {
        self.0.iter().find(|l| &l.code == code).map_or(code.as_str(), |l| l.name.as_str())
    }

    pub fn codes(&self) -> impl Iterator<Item = &LanguageCode> {
        self.0.iter().map(|l| &l.code)
    }

    /// Declared order first, then any other language of the corpus.
    pub fn ordered(&self, corpus: &Corpus) -> Vec<LanguageCode> {
        let mut out: Vec<LanguageCode> = self.codes().filter(|c| corpus.declares(c)).cloned().collect();
        let rest: Vec<LanguageCode> = corpus.languages().iter().filter(|c| !out.contains(c)).cloned().collect();
        out.extend(rest);
        out
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    languages: Vec<LanguageInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum StoryboardRecord {
    Storyboard { id: String, title: String },
    Scene(Scene),
}

/// A record that could not be loaded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", .path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("{} record(s) rejected; first: {}", .0.len(), .0[0])]
    Records(Vec<RecordError>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub dir: PathBuf,
    pub languages: Languages,
    pub corpus: Corpus,
}

impl Bundle {
    /// Whether an image reference resolves to a file inside the bundle.
    pub fn image_exists(&self, image_ref: &str) -> bool {
        safe_relative(image_ref).is_some_and(|rel| self.dir.join(rel).is_file())
    }
}

/// `rel` as a path that cannot leave its base directory.
pub fn safe_relative(rel: &str) -> Option<PathBuf> {
    let path = Path::new(rel);
    let ok = !rel.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    ok.then(|| path.to_path_buf())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, BundleError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_languages(dir: &Path) -> Result<Languages, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Languages::default());
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| BundleError::Manifest { path: path.clone(), message: e.to_string() })?;
    Ok(Languages(manifest.languages))
}

/// Loads a bundle. Every record is either loaded or reported; any rejected
/// record fails the whole load with the full list.
pub fn read_bundle(dir: &Path) -> Result<Bundle, BundleError> {
    let languages = read_languages(dir)?;
    let mut corpus = Corpus::new(languages.codes().cloned());
    let mut errors = Vec::new();

    let sb_path = dir.join(STORYBOARDS_FILE);
    let mut headers: Vec<(usize, String, String)> = Vec::new();
    let mut scenes: BTreeMap<String, Vec<(usize, Scene)>> = BTreeMap::new();
    for (line, text) in read_lines(&sb_path)? {
        let reject = |message: String| RecordError { file: STORYBOARDS_FILE.into(), line, message };
        match serde_json::from_str::<StoryboardRecord>(&text) {
            Ok(StoryboardRecord::Storyboard { id, title }) => headers.push((line, id, title)),
            Ok(StoryboardRecord::Scene(scene)) => {
                let list = scenes.entry(scene.storyboard_id.clone()).or_default();
                if list.iter().any(|(_, s)| s.index == scene.index) {
                    errors.push(reject(
                        CorpusError::DuplicateScene { storyboard_id: scene.storyboard_id, index: scene.index }
                            .to_string(),
                    ));
                } else {
                    list.push((line, scene));
                }
            }
            Err(e) => errors.push(reject(format!("malformed record: {e}"))),
        }
    }
    for (line, id, title) in headers {
        let own = scenes.remove(&id).unwrap_or_default();
        let storyboard = Storyboard { id, title, scenes: own.into_iter().map(|(_, s)| s).collect() };
        if let Err(e) = corpus.add_storyboard(storyboard) {
            errors.push(RecordError { file: STORYBOARDS_FILE.into(), line, message: e.to_string() });
        }
    }
    for (storyboard_id, orphans) in scenes {
        for (line, scene) in orphans {
            let message = CorpusError::UnknownStoryboard { storyboard_id: storyboard_id.clone(), index: scene.index };
            errors.push(RecordError { file: STORYBOARDS_FILE.into(), line, message: message.to_string() });
        }
    }

    let unit_path = dir.join(UNITS_FILE);
    for (line, text) in read_lines(&unit_path)? {
        let result = serde_json::from_str::<TranslationUnit>(&text)
            .map_err(|e| format!("malformed record: {e}"))
            .and_then(|unit| corpus.add_unit(unit).map_err(|e| e.to_string()));
        if let Err(message) = result {
            errors.push(RecordError { file: UNITS_FILE.into(), line, message });
        }
    }

    if errors.is_empty() {
        Ok(Bundle { dir: dir.to_path_buf(), languages, corpus })
    } else {
        errors.sort_by(|a, b| (&a.file, a.line).cmp(&(&b.file, b.line)));
        Err(BundleError::Records(errors))
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), BundleError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("bundle records serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes the three bundle files into `dir`, creating it if needed. Images
/// are not copied.
pub fn write_bundle(dir: &Path, corpus: &Corpus, languages: &Languages) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let declared: Vec<LanguageInfo> = languages
        .ordered(corpus)
        .into_iter()
        .map(|code| LanguageInfo { name: languages.name(&code).to_string(), code })
        .collect();
    let manifest = serde_json::to_string_pretty(&Manifest { languages: declared }).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest + "\n").map_err(io_err(&path))?;

    let records = corpus.storyboards().iter().flat_map(|sb| {
        std::iter::once(StoryboardRecord::Storyboard { id: sb.id.clone(), title: sb.title.clone() })
            .chain(sb.scenes.iter().cloned().map(StoryboardRecord::Scene))
    });
    write_jsonl(&dir.join(STORYBOARDS_FILE), records)?;
    write_jsonl(&dir.join(UNITS_FILE), corpus.units())
}

/// Stable pseudonym for an annotator or translator id.
pub fn pseudonym(id: &str, salt: &str) -> String {
    let digest = Sha256::new().chain_update(salt.as_bytes()).chain_update([0u8]).chain_update(id.as_bytes()).finalize();
    format!("anon-{}", &hex::encode(digest)[..12])
}

/// The same corpus with every translator id replaced by its pseudonym.
pub fn anonymize(corpus: &Corpus, salt: &str) -> Corpus {
    let units = corpus
        .units()
        .iter()
        .map(|u| TranslationUnit { translator_id: pseudonym(&u.translator_id, salt), ..u.clone() });
    Corpus::from_parts(corpus.languages().iter().cloned(), corpus.storyboards().iter().cloned(), units)
        .expect("renaming translators keeps a valid corpus valid")
}

/// Copies every file of a bundle directory (recursively) into `dest`.
pub fn copy_dir(src: &Path, dest: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dest)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let target = dest.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use elicit_core::corpus::{corpus_counts, Method};

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    const STORYBOARDS: &str = r#"{"type":"storyboard","id":"market","title":"Market day"}
{"type":"scene","storyboard_id":"market","index":1,"english_text":"I bought shoes.","image_ref":"img/1.png"}
{"type":"scene","storyboard_id":"market","index":2,"english_text":"She went home.","image_ref":"img/2.png"}
"#;

    const UNITS: &str = r#"{"id":"u1","language":"hau","storyboard_id":"market","scene_index":1,"method":"text","translator_id":"t1","text":"Na sayi takalma."}
{"id":"u2","language":"hau","storyboard_id":"market","scene_index":2,"method":"text","translator_id":"t1","text":"Ta tafi gida."}
{"id":"u3","language":"hau","storyboard_id":"market","scene_index":1,"method":"storyboard","translator_id":"t2","text":"Na siyo takalma."}
{"id":"u4","language":"hau","storyboard_id":"market","scene_index":2,"method":"storyboard","translator_id":"t2","text":"Ta koma gida."}
"#;

    #[test]
    fn small_bundle_counts() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), STORYBOARDS_FILE, STORYBOARDS);
        write(dir.path(), UNITS_FILE, UNITS);
        let b = read_bundle(dir.path()).unwrap();
        let counts = corpus_counts(&b.corpus);
        assert_eq!(counts.get(&"hau".into(), Method::Text), 2);
        assert_eq!(counts.get(&"hau".into(), Method::Storyboard), 2);
        assert_eq!(b.languages.name(&"yor".into()), "Yorùbá");
    }

    #[test]
    fn empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), STORYBOARDS_FILE, "");
        write(dir.path(), UNITS_FILE, "\n");
        let b = read_bundle(dir.path()).unwrap();
        assert!(b.corpus.units().is_empty());
        assert!(b.corpus.storyboards().is_empty());
    }

    #[test]
    fn dangling_and_malformed_records_are_reported_with_lines() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), STORYBOARDS_FILE, STORYBOARDS);
        let units = format!(
            "{UNITS}{}\nnot json\n",
            r#"{"id":"u9","language":"hau","storyboard_id":"market","scene_index":99,"method":"text","translator_id":"t1","text":"x"}"#
        );
        write(dir.path(), UNITS_FILE, &units);
        let Err(BundleError::Records(errors)) = read_bundle(dir.path()) else { panic!() };
        assert_eq!(errors.len(), 2);
        assert_eq!(errors[0].line, 5);
        assert!(errors[0].message.contains("u9"), "{}", errors[0]);
        assert_eq!(errors[1].line, 6);
        assert!(errors[1].message.starts_with("malformed record"));
    }

    #[test]
    fn duplicate_and_orphan_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let extra = r#"{"type":"scene","storyboard_id":"market","index":2,"english_text":"again","image_ref":"x.png"}
{"type":"scene","storyboard_id":"nowhere","index":1,"english_text":"lost","image_ref":"x.png"}
{"type":"storyboard","id":"market","title":"twice"}
"#;
        write(dir.path(), STORYBOARDS_FILE, &format!("{STORYBOARDS}{extra}"));
        write(dir.path(), UNITS_FILE, "");
        let Err(BundleError::Records(errors)) = read_bundle(dir.path()) else { panic!() };
        let lines: Vec<usize> = errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![4, 5, 6]);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), STORYBOARDS_FILE, STORYBOARDS);
        write(dir.path(), UNITS_FILE, UNITS);
        let b = read_bundle(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_bundle(out.path(), &b.corpus, &b.languages).unwrap();
        let again = read_bundle(out.path()).unwrap();
        assert_eq!(again.corpus, b.corpus);
        assert_eq!(fs::read_to_string(out.path().join(UNITS_FILE)).unwrap(), UNITS);
    }

    #[test]
    fn pseudonyms_are_stable_and_salted() {
        assert_eq!(pseudonym("t1", ""), pseudonym("t1", ""));
        assert_ne!(pseudonym("t1", ""), pseudonym("t2", ""));
        assert_ne!(pseudonym("t1", "a"), pseudonym("t1", "b"));
        assert_eq!(pseudonym("t1", "").len(), "anon-".len() + 12);
    }

    #[test]
    fn relative_paths_stay_inside() {
        assert!(safe_relative("img/1.png").is_some());
        assert!(safe_relative("../etc/passwd").is_none());
        assert!(safe_relative("/etc/passwd").is_none());
        assert!(safe_relative("").is_none());
    }
}
