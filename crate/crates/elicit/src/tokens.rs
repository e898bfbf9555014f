//! Pre-shared bearer tokens. Only SHA-256 digests are stored.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use elicit_core::protocol::Role;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOKENS_FILE: &str = "tokens.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_sha256: String,
    pub annotator_id: String,
    pub role: Role,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    Missing,
    #[error("unknown token")]
    Unknown,
    #[error("token expired at {0}")]
    Expired(DateTime<Utc>),
}

pub fn digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

pub fn tokens_path(data_dir: &Path) -> PathBuf {
    data_dir.join(TOKENS_FILE)
}

/// Appends a new token for `annotator_id` and returns it. The token itself
/// is not kept anywhere.
pub fn issue(
    data_dir: &Path,
    annotator_id: &str,
    role: Role,
    ttl_days: i64,
    now: DateTime<Utc>,
) -> io::Result<(String, TokenRecord)> {
    let token = hex::encode(rand::rng().random::<[u8; 32]>());
    let record = TokenRecord {
        token_sha256: digest(&token),
        annotator_id: annotator_id.into(),
        role,
        expires_at: now + chrono::Duration::days(ttl_days),
    };
    fs::create_dir_all(data_dir)?;
    let mut f = OpenOptions::new().create(true).append(true).open(tokens_path(data_dir))?;
    let mut line = serde_json::to_string(&record).expect("token record serializes");
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok((token, record))
}

/// The tokens file, indexed by digest.
#[derive(Debug, Default)]
pub struct TokenBook {
    path: PathBuf,
    by_digest: HashMap<String, TokenRecord>,
}

impl TokenBook {
    pub fn load(data_dir: &Path) -> io::Result<TokenBook> {
        let mut book = TokenBook { path: tokens_path(data_dir), by_digest: HashMap::new() };
        book.reload()?;
        Ok(book)
    }

    /// Rereads the file; a missing file is an empty book. Unreadable lines
    /// are skipped with a warning.
    pub fn reload(&mut self) -> io::Result<()> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        self.by_digest.clear();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<TokenRecord>(line) {
                Ok(r) => {
                    self.by_digest.insert(r.token_sha256.clone(), r);
                }
                Err(e) => eprintln!("warning: {}:{}: {e}", self.path.display(), i + 1),
            }
        }
        Ok(())
    }

    pub fn lookup(&self, token: &str, now: DateTime<Utc>) -> Result<&TokenRecord, AuthError> {
        let r = self.by_digest.get(&digest(token)).ok_or(AuthError::Unknown)?;
        if r.expires_at <= now {
            return Err(AuthError::Expired(r.expires_at));
        }
        Ok(r)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.by_digest.contains_key(&digest(token))
    }

    /// Annotators holding an unexpired evaluator token, sorted.
    pub fn evaluators(&self, now: DateTime<Utc>) -> Vec<String> {
        let mut out: Vec<String> = self
            .by_digest
            .values()
            .filter(|r| r.role == Role::Evaluator && r.expires_at > now)
            .map(|r| r.annotator_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
