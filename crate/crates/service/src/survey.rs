//! Post-session questionnaires with five-point Likert items.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const LIKERT_MIN: i64 = 1;
pub const LIKERT_MAX: i64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrument {
    pub id: String,
    pub title: String,
    pub items: Vec<InstrumentItem>,
}

/// Instruments shipped with the service.
pub fn default_instruments() -> Vec<Instrument> {
    serde_json::from_str(include_str!("../assets/instruments.json")).expect("bundled instruments parse")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub item_id: String,
    pub likert: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySubmission {
    pub instrument_id: String,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub session_id: String,
    pub instrument_id: String,
    pub answers: Vec<Answer>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SurveyError {
    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),
    #[error("item `{item_id}` has likert value {likert}, expected {LIKERT_MIN}..={LIKERT_MAX}")]
    Range { item_id: String, likert: i64 },
    #[error("{0}")]
    Incomplete(String),
}

impl Instrument {
    /// Every item answered exactly once, nothing extra, all values in range.
    pub fn check(&self, answers: &[Answer]) -> Result<(), SurveyError> {
        let items: BTreeSet<&str> = self.items.iter().map(|i| i.id.as_str()).collect();
        let mut seen = BTreeSet::new();
        for a in answers {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&a.likert) {
                return Err(SurveyError::Range {
                    item_id: a.item_id.clone(),
                    likert: a.likert,
                });
            }
            if !items.contains(a.item_id.as_str()) {
                return Err(SurveyError::Incomplete(format!(
                    "`{}` is not an item of `{}`",
                    a.item_id, self.id
                )));
            }
            if !seen.insert(a.item_id.as_str()) {
                return Err(SurveyError::Incomplete(format!("item `{}` answered twice", a.item_id)));
            }
        }
        if seen.len() != items.len() {
            let missing: Vec<_> = items.difference(&seen).copied().collect();
            return Err(SurveyError::Incomplete(format!("unanswered items: {}", missing.join(", "))));
        }
        Ok(())
    }
}
