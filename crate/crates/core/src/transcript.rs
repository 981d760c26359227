//! Conversation transcripts and their JSON-lines file format.
//!
//! A file starts with a header line describing the session, followed by one
//! line per turn. Bot turns hold a single bubble each.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::turn::BubbleAnnotation;

pub const TRANSCRIPT_FORMAT: &str = "scriptalign-transcript";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    RuleBased,
    PureLlm,
    SagPrompt,
    Ssag,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::RuleBased,
        Condition::PureLlm,
        Condition::SagPrompt,
        Condition::Ssag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::RuleBased => "rule_based",
            Condition::PureLlm => "pure_llm",
            Condition::SagPrompt => "sag_prompt",
            Condition::Ssag => "ssag",
        }
    }

    /// Row label used in metric tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Condition::RuleBased => "Rule-based",
            Condition::PureLlm => "Pure LLM",
            Condition::SagPrompt => "SAG-Prompt",
            Condition::Ssag => "SSAG",
        }
    }

    /// Whether the condition calls a language model.
    pub fn needs_backend(self) -> bool {
        self != Condition::RuleBased
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| format!("unknown condition `{s}` (expected rule_based, pure_llm, sag_prompt or ssag)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    Bot,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: TurnRole,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub annotations: BubbleAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub condition: Condition,
    pub topic_id: String,
    pub turns: Vec<TranscriptTurn>,
    pub completed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    session_id: String,
    condition: Condition,
    topic_id: String,
    completed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid transcript `{session_id}`: {message}")]
    Invariant { session_id: String, message: String },
}

impl Transcript {
    pub fn new(session_id: impl Into<String>, condition: Condition, topic_id: impl Into<String>) -> Self {
        Transcript {
            session_id: session_id.into(),
            condition,
            topic_id: topic_id.into(),
            turns: Vec::new(),
            completed: false,
        }
    }

    pub fn push_bot(&mut self, text: impl Into<String>, annotations: BubbleAnnotation, timestamp: DateTime<Utc>) {
        self.turns.push(TranscriptTurn {
            role: TurnRole::Bot,
            text: text.into(),
            timestamp,
            annotations,
        });
    }

    pub fn push_user(&mut self, text: impl Into<String>, matched_option: Option<String>, timestamp: DateTime<Utc>) {
        self.turns.push(TranscriptTurn {
            role: TurnRole::User,
            text: text.into(),
            timestamp,
            annotations: BubbleAnnotation {
                matched_node_id: matched_option,
                strategy: None,
            },
        });
    }

    pub fn bot_turns(&self) -> impl Iterator<Item = &TranscriptTurn> {
        self.turns.iter().filter(|t| t.role == TurnRole::Bot)
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &TranscriptTurn> {
        self.turns.iter().filter(|t| t.role == TurnRole::User)
    }

    /// Timestamps never go back and no two user turns are adjacent. Several
    /// bot bubbles in a row are normal.
    pub fn check(&self) -> Result<(), TranscriptError> {
        let fail = |message: String| TranscriptError::Invariant {
            session_id: self.session_id.clone(),
            message,
        };
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(fail(format!("timestamp of turn {} goes backwards", i + 1)));
            }
            if pair[0].role == TurnRole::User && pair[1].role == TurnRole::User {
                return Err(fail(format!("turns {i} and {} are both from the user", i + 1)));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut sink: impl Write) -> std::io::Result<()> {
        let header = Header {
            format: TRANSCRIPT_FORMAT.into(),
            version: 1,
            session_id: self.session_id.clone(),
            condition: self.condition,
            topic_id: self.topic_id.clone(),
            completed: self.completed,
        };
        serde_json::to_writer(&mut sink, &header)?;
        sink.write_all(b"\n")?;
        for turn in &self.turns {
            serde_json::to_writer(&mut sink, turn)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, TranscriptError> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map_or(true, |l| !l.trim().is_empty())
        });
        let io = |line: usize, e: std::io::Error| TranscriptError::Format {
            line,
            message: e.to_string(),
        };
        let (_, first) = lines.next().ok_or(TranscriptError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        let first = first.map_err(|e| io(1, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| TranscriptError::Format {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format != TRANSCRIPT_FORMAT {
            return Err(TranscriptError::Format {
                line: 1,
                message: format!("expected format `{TRANSCRIPT_FORMAT}`, found `{}`", header.format),
            });
        }
        let mut turns = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| io(idx + 1, e))?;
            let turn = serde_json::from_str(&line).map_err(|e| TranscriptError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
            turns.push(turn);
        }
        Ok(Transcript {
            session_id: header.session_id,
            condition: header.condition,
            topic_id: header.topic_id,
            turns,
            completed: header.completed,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let file = std::fs::File::open(path).map_err(|source| TranscriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_jsonl(std::io::BufReader::new(file)).map_err(|e| match e {
            TranscriptError::Format { line, message } => TranscriptError::Format {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TranscriptError> {
        std::fs::write(path, self.to_jsonl()).map_err(|source| TranscriptError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Reads every `*.jsonl` file in `dir`, sorted by file name.
pub fn load_transcript_dir(dir: &Path) -> Result<Vec<Transcript>, TranscriptError> {
    let io = |source| TranscriptError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| Transcript::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(s, 0).unwrap()
    }

    fn sample() -> Transcript {
        let mut t = Transcript::new("s1", Condition::Ssag, "topic");
        t.push_bot("Hi", BubbleAnnotation::default(), at(0));
        t.push_bot(
            "How are you?",
            BubbleAnnotation {
                matched_node_id: Some("q".into()),
                strategy: Some("ask_question".into()),
            },
            at(0),
        );
        t.push_user("fine", Some("opt".into()), at(1));
        t.completed = true;
        t
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(Transcript::read_jsonl(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn invariants() {
        let mut t = sample();
        t.check().unwrap();
        t.push_user("again", None, at(2));
        assert!(t.check().is_err());
        let mut t = sample();
        t.push_bot("late", BubbleAnnotation::default(), at(-5));
        assert!(t.check().is_err());
    }

    #[test]
    fn conditions_parse() {
        assert_eq!("SAG-Prompt".parse::<Condition>().unwrap(), Condition::SagPrompt);
        assert!("sag".parse::<Condition>().is_err());
        assert_eq!(serde_json::to_string(&Condition::PureLlm).unwrap(), "\"pure_llm\"");
    }

    #[test]
    fn bad_header() {
        let err = Transcript::read_jsonl(&b"{\"format\":\"other\"}\n"[..]).unwrap_err();
        assert!(matches!(err, TranscriptError::Format { line: 1, .. }));
    }
}
