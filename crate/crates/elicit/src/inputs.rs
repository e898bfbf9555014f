//! Embedding and POS-distribution files produced by external models.
//!
//! Both are JSON lines keyed by `sentence_id`: a unit id for translations,
//! `en:{storyboard_id}:{scene_index}` for English source sentences.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use elicit_core::metrics::{EmbeddingVector, TokenDistribution};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", .path.display())]
    Record { path: PathBuf, line: usize, message: String },
}

fn records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, InputError> {
    let text = fs::read_to_string(path).map_err(|source| InputError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| InputError::Record {
            path: path.into(),
            line: i + 1,
            message: format!("malformed record: {e}"),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Reads an embeddings file. Every vector must have the dimension of the
/// first one and finite values; sentence ids must be unique.
pub fn read_embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>, InputError> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (line, v) in records::<EmbeddingVector>(path)? {
        let fail = |message: String| InputError::Record { path: path.into(), line, message };
        let expected = *dim.get_or_insert(v.dim());
        if v.dim() != expected {
            return Err(fail(format!("dimension {} differs from {expected}", v.dim())));
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(fail(format!("`{}` has non-finite values", v.sentence_id)));
        }
        if out.contains_key(&v.sentence_id) {
            return Err(fail(format!("duplicate sentence id `{}`", v.sentence_id)));
        }
        out.insert(v.sentence_id.clone(), v);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PosRecord {
    sentence_id: String,
    tokens: Vec<TokenDistribution>,
}

/// Reads a POS file; every distribution is checked on load.
pub fn read_pos(path: &Path) -> Result<BTreeMap<String, Vec<TokenDistribution>>, InputError> {
    let mut out = BTreeMap::new();
    for (line, r) in records::<PosRecord>(path)? {
        let fail = |message: String| InputError::Record { path: path.into(), line, message };
        for d in &r.tokens {
            d.check().map_err(|e| fail(e.to_string()))?;
        }
        if out.insert(r.sentence_id.clone(), r.tokens).is_some() {
            return Err(fail(format!("duplicate sentence id `{}`", r.sentence_id)));
        }
    }
    Ok(out)
}
