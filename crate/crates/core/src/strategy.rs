//! Therapist strategy labels, label maps and lenient parsing of classifier
//! output.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::turn::EngineError;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyLabel {
    AskQuestion,
    ReflectiveListening,
    GiveInformation,
    Other(String),
}

impl StrategyLabel {
    /// Rank used to pick one label from a multi-label prediction; lower wins.
    pub fn priority(&self) -> u8 {
        match self {
            StrategyLabel::AskQuestion => 0,
            StrategyLabel::GiveInformation => 1,
            StrategyLabel::ReflectiveListening => 2,
            StrategyLabel::Other(_) => 3,
        }
    }
}

impl fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyLabel::AskQuestion => f.write_str("ask_question"),
            StrategyLabel::ReflectiveListening => f.write_str("reflective_listening"),
            StrategyLabel::GiveInformation => f.write_str("give_information"),
            StrategyLabel::Other(code) => write!(f, "other:{code}"),
        }
    }
}

impl FromStr for StrategyLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ask_question" => Ok(StrategyLabel::AskQuestion),
            "reflective_listening" => Ok(StrategyLabel::ReflectiveListening),
            "give_information" => Ok(StrategyLabel::GiveInformation),
            _ => match s.strip_prefix("other:") {
                Some(code) if !code.is_empty() => Ok(StrategyLabel::Other(code.to_string())),
                _ => Err(format!("unknown strategy `{s}`")),
            },
        }
    }
}

impl TryFrom<String> for StrategyLabel {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StrategyLabel> for String {
    fn from(l: StrategyLabel) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub code: String,
    pub strategy: StrategyLabel,
    /// Extra spellings accepted when parsing, besides the code itself.
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Output codes of a strategy classifier and what they mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub name: String,
    pub multi_label: bool,
    pub labels: Vec<LabelEntry>,
}

const BUILTIN: [(&str, &str); 3] = [
    ("core3", include_str!("../assets/labelmaps/core3.json")),
    ("annomi", include_str!("../assets/labelmaps/annomi.json")),
    ("bimisc", include_str!("../assets/labelmaps/bimisc.json")),
];

/// Names of the maps shipped with the crate.
pub fn builtin_label_maps() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Where a label map comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelMapConfig {
    Named(String),
    Custom(LabelMap),
}

pub fn load_label_map(config: &LabelMapConfig) -> Result<LabelMap, EngineError> {
    match config {
        LabelMapConfig::Named(name) => {
            let (_, json) = BUILTIN
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| EngineError::UnknownLabelMap(name.clone()))?;
            LabelMap::from_json(json)
        }
        LabelMapConfig::Custom(map) => {
            map.check()?;
            Ok(map.clone())
        }
    }
}

fn word_bounded_find(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        if !is_word(haystack[..start].chars().next_back()) && !is_word(haystack[end..].chars().next()) {
            return Some(start);
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

impl LabelMap {
    pub fn from_json(json: &str) -> Result<Self, EngineError> {
        let map: LabelMap =
            serde_json::from_str(json).map_err(|e| EngineError::InvalidLabelMap(e.to_string()))?;
        map.check()?;
        Ok(map)
    }

    fn check(&self) -> Result<(), EngineError> {
        if self.labels.is_empty() {
            return Err(EngineError::InvalidLabelMap(format!("`{}` has no labels", self.name)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.labels {
            if entry.code.trim().is_empty() {
                return Err(EngineError::InvalidLabelMap("empty code".into()));
            }
            if !seen.insert(entry.code.to_lowercase()) {
                return Err(EngineError::InvalidLabelMap(format!("duplicate code `{}`", entry.code)));
            }
        }
        Ok(())
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|e| e.code.as_str())
    }

    /// Codes reordered so the ask, reflect and inform codes come first.
    pub fn canonical_codes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for wanted in [
            StrategyLabel::AskQuestion,
            StrategyLabel::ReflectiveListening,
            StrategyLabel::GiveInformation,
        ] {
            if let Some(e) = self.labels.iter().find(|e| e.strategy == wanted) {
                out.push(e.code.clone());
            }
        }
        for e in &self.labels {
            if !out.contains(&e.code) {
                out.push(e.code.clone());
            }
        }
        out
    }

    /// Recognized labels in order of first appearance, case-insensitive and
    /// on word boundaries. Single-label maps keep only the first.
    pub fn parse(&self, text: &str) -> Vec<StrategyLabel> {
        let lower = text.to_lowercase();
        let mut hits: Vec<(usize, &StrategyLabel)> = Vec::new();
        for entry in &self.labels {
            let first = std::iter::once(&entry.code)
                .chain(&entry.aliases)
                .filter_map(|alias| word_bounded_find(&lower, &alias.to_lowercase()))
                .min();
            if let Some(pos) = first {
                hits.push((pos, &entry.strategy));
            }
        }
        hits.sort_by_key(|(pos, _)| *pos);
        let mut labels: Vec<StrategyLabel> = Vec::new();
        for (_, label) in hits {
            if !labels.contains(label) {
                labels.push(label.clone());
            }
        }
        if !self.multi_label {
            labels.truncate(1);
        }
        labels
    }
}
