use alloc::string::String;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::tasks::EvaluationTask;
use crate::agreement::Preference;
use crate::corpus::Method;

/// What the annotator clicked, before unblinding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RawChoice {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "both")]
    Both,
}

impl RawChoice {
    pub const ALL: [RawChoice; 3] = [RawChoice::One, RawChoice::Two, RawChoice::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            RawChoice::One => "1",
            RawChoice::Two => "2",
            RawChoice::Both => "both",
        }
    }

    /// Column in a ratings matrix.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RawChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for RawChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(RawChoice::One),
            "2" => Ok(RawChoice::Two),
            "both" | "b" => Ok(RawChoice::Both),
            other => Err(alloc::format!("invalid choice `{other}` (expected 1, 2 or both)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator_id: String,
    pub raw_choice: RawChoice,
    pub submitted_at: DateTime<Utc>,
}

/// Maps a blinded choice through the task's hidden slot order.
pub fn unblind(task: &EvaluationTask, choice: RawChoice) -> Preference {
    let method = match choice {
        RawChoice::One => task.blinding.slot1,
        RawChoice::Two => task.blinding.slot2(),
        RawChoice::Both => return Preference::Both,
    };
    match method {
        Method::Storyboard => Preference::Storyboard,
        Method::Text => Preference::Text,
    }
}
