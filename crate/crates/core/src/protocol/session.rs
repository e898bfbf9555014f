//! Elicitation sessions for the control and treatment tracks.
//!
//! ```text
//! control:    created ──────────────────────────────► annotating ─► complete
//! treatment:  created ─► reading ─► gap ─(gap elapsed)► annotating ─► complete
//! ```
//!
//! Submitting translations keeps a session in `annotating`.

use alloc::string::String;
use core::fmt;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::corpus::{LanguageCode, Method};

pub const DEFAULT_GAP_SECONDS: u64 = 3600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    ControlText,
    TreatmentStoryboard,
}

impl Track {
    /// Method recorded on units produced in this track.
    pub fn method(self) -> Method {
        match self {
            Track::ControlText => Method::Text,
            Track::TreatmentStoryboard => Method::Storyboard,
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::ControlText => "control_text",
            Track::TreatmentStoryboard => "treatment_storyboard",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Reading,
    Gap,
    Annotating,
    Complete,
}

impl SessionState {
    pub const ALL: [SessionState; 5] =
        [SessionState::Created, SessionState::Reading, SessionState::Gap, SessionState::Annotating, SessionState::Complete];
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Created => "created",
            SessionState::Reading => "reading",
            SessionState::Gap => "gap",
            SessionState::Annotating => "annotating",
            SessionState::Complete => "complete",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    StartReading,
    CompleteReading,
    BeginAnnotation,
    SubmitTranslation,
    Complete,
}

impl Action {
    pub const ALL: [Action; 5] =
        [Action::StartReading, Action::CompleteReading, Action::BeginAnnotation, Action::SubmitTranslation, Action::Complete];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::StartReading => "start reading",
            Action::CompleteReading => "complete reading",
            Action::BeginAnnotation => "begin annotation",
            Action::SubmitTranslation => "submit a translation to",
            Action::Complete => "complete",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitationSession {
    pub id: String,
    pub annotator_id: String,
    pub corpus_id: String,
    pub storyboard_id: String,
    pub language: LanguageCode,
    pub track: Track,
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    pub reading_completed_at: Option<DateTime<Utc>>,
    pub gap_seconds: u64,
}

impl ElicitationSession {
    /// A new session in `created`. `gap_seconds` only matters for the
    /// treatment track and defaults to one hour.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        annotator_id: impl Into<String>,
        corpus_id: impl Into<String>,
        storyboard_id: impl Into<String>,
        language: LanguageCode,
        track: Track,
        gap_seconds: Option<u64>,
        now: DateTime<Utc>,
    ) -> Self {
        ElicitationSession {
            id: id.into(),
            annotator_id: annotator_id.into(),
            corpus_id: corpus_id.into(),
            storyboard_id: storyboard_id.into(),
            language,
            track,
            state: SessionState::Created,
            created_at: now,
            reading_completed_at: None,
            gap_seconds: gap_seconds.unwrap_or(DEFAULT_GAP_SECONDS),
        }
    }

    pub fn is_open(&self) -> bool {
        self.state != SessionState::Complete
    }

    fn invalid(&self, action: Action) -> ProtocolError {
        ProtocolError::InvalidTransition { track: self.track, state: self.state, action }
    }

    fn with_state(&self, state: SessionState) -> Self {
        ElicitationSession { state, ..self.clone() }
    }

    /// Earliest instant annotation may begin, once reading is complete.
    pub fn annotation_opens_at(&self) -> Option<DateTime<Utc>> {
        let gap = i64::try_from(self.gap_seconds).ok().and_then(TimeDelta::try_seconds)?;
        self.reading_completed_at?.checked_add_signed(gap)
    }

    /// Whole seconds left in the gap, rounded up; 0 once it has elapsed.
    pub fn remaining_gap_seconds(&self, now: DateTime<Utc>) -> Option<u64> {
        let opens = self.annotation_opens_at()?;
        if now >= opens {
            return Some(0);
        }
        let left = opens - now;
        let whole = left.num_seconds();
        let rounded = if left > TimeDelta::seconds(whole) { whole + 1 } else { whole };
        Some(rounded as u64)
    }

    pub fn start_reading(&self) -> Result<Self, ProtocolError> {
        match (self.track, self.state) {
            (Track::TreatmentStoryboard, SessionState::Created) => Ok(self.with_state(SessionState::Reading)),
            _ => Err(self.invalid(Action::StartReading)),
        }
    }

    pub fn complete_reading(&self, now: DateTime<Utc>) -> Result<Self, ProtocolError> {
        match (self.track, self.state) {
            (Track::TreatmentStoryboard, SessionState::Reading) => {
                let mut next = self.with_state(SessionState::Gap);
                next.reading_completed_at = Some(now);
                Ok(next)
            }
            _ => Err(self.invalid(Action::CompleteReading)),
        }
    }

    /// Enters `annotating`. In the treatment track this fails with the
    /// remaining wait until `reading_completed_at + gap_seconds`.
    pub fn begin_annotation(&self, now: DateTime<Utc>) -> Result<Self, ProtocolError> {
        match (self.track, self.state) {
            (Track::ControlText, SessionState::Created) => Ok(self.with_state(SessionState::Annotating)),
            (Track::TreatmentStoryboard, SessionState::Gap) => match self.remaining_gap_seconds(now) {
                Some(0) => Ok(self.with_state(SessionState::Annotating)),
                Some(remaining_seconds) => Err(ProtocolError::GapNotElapsed { remaining_seconds }),
                None => Err(self.invalid(Action::BeginAnnotation)),
            },
            _ => Err(self.invalid(Action::BeginAnnotation)),
        }
    }

    /// Checks that a translation may be recorded; the session is unchanged.
    pub fn accept_translation(&self) -> Result<(), ProtocolError> {
        if self.state == SessionState::Annotating {
            Ok(())
        } else {
            Err(self.invalid(Action::SubmitTranslation))
        }
    }

    pub fn complete(&self) -> Result<Self, ProtocolError> {
        match self.state {
            SessionState::Annotating => Ok(self.with_state(SessionState::Complete)),
            _ => Err(self.invalid(Action::Complete)),
        }
    }

    /// Dispatches one action; the single entry point used for replay.
    pub fn step(&self, action: Action, now: DateTime<Utc>) -> Result<Self, ProtocolError> {
        match action {
            Action::StartReading => self.start_reading(),
            Action::CompleteReading => self.complete_reading(now),
            Action::BeginAnnotation => self.begin_annotation(now),
            Action::SubmitTranslation => self.accept_translation().map(|()| self.clone()),
            Action::Complete => self.complete(),
        }
    }
}
