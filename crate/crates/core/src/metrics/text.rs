//! Word tokenization shared by every lexical metric.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizationScheme {
    /// UAX #29 word boundaries, lowercased, punctuation-only segments dropped.
    #[default]
    UnicodeWords,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source_unit_id: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, source_unit_id: impl Into<String>) -> Self {
        TokenSequence { tokens, source_unit_id: source_unit_id.into() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }
}

/// Splits NFC text into lowercase word tokens. Word-internal apostrophes and
/// combining marks stay attached to their word.
pub fn tokenize(text: &str, scheme: TokenizationScheme) -> Vec<String> {
    match scheme {
        TokenizationScheme::UnicodeWords => text.unicode_words().map(|w| w.to_lowercase()).collect(),
    }
}
