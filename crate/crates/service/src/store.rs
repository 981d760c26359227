//! Append-only JSON-lines event log.
//!
//! Every write is one line holding all events of one step, so a step is
//! either fully on disk or not at all. A torn final line left by a crash is
//! cut off when the log is reopened.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use scriptalign_core::transcript::Condition;
use scriptalign_core::{BotTurn, UserInput};

use crate::survey::SurveyResponse;

/// One backend reply as seen by an engine, kept so steps can be replayed
/// without calling the backend again.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCall {
    pub tag: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        condition: Condition,
        topic_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend: Option<String>,
        at: DateTime<Utc>,
    },
    MessageIn {
        input: UserInput,
        at: DateTime<Utc>,
    },
    MessageOut {
        turn: BotTurn,
        #[serde(default)]
        backend_calls: Vec<BackendCall>,
        at: DateTime<Utc>,
    },
    Completed {
        at: DateTime<Utc>,
    },
    SurveySubmitted {
        response: SurveyResponse,
    },
    Error {
        code: String,
        message: String,
        at: DateTime<Utc>,
    },
}

/// Events written together in one line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventGroup {
    pub session_id: String,
    pub events: Vec<Event>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line} is corrupt: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub struct EventStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventStore {
    /// Opens or creates the log and returns every committed group.
    pub fn open(path: &Path) -> Result<(Self, Vec<EventGroup>), StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;

        let mut groups = Vec::new();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            match serde_json::from_str::<EventGroup>(line.trim_end()) {
                Ok(group) if complete => {
                    groups.push(group);
                    good_len += n as u64;
                }
                result => {
                    let at_end = reader.fill_buf().map_err(io)?.is_empty();
                    if !at_end {
                        let message = match result {
                            Err(e) => e.to_string(),
                            Ok(_) => "missing line terminator".into(),
                        };
                        return Err(StoreError::Corrupt {
                            path: path.to_path_buf(),
                            line: line_no,
                            message,
                        });
                    }
                    tracing::warn!(path = %path.display(), line = line_no, "dropping torn final line");
                    break;
                }
            }
        }
        drop(reader);
        if file.metadata().map_err(io)?.len() != good_len {
            file.set_len(good_len).map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok((
            EventStore {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            groups,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the group as one line and syncs it to disk.
    pub fn append(&self, group: &EventGroup) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(group).expect("events serialize");
        line.push(b'\n');
        let mut file = self.file.lock().expect("store lock");
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        file.write_all(&line).map_err(io)?;
        file.sync_data().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn group(id: &str) -> EventGroup {
        EventGroup {
            session_id: id.into(),
            events: vec![Event::Completed {
                at: Utc.timestamp_opt(0, 0).unwrap(),
            }],
        }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (store, groups) = EventStore::open(&path).unwrap();
            assert!(groups.is_empty());
            store.append(&group("a")).unwrap();
            store.append(&group("b")).unwrap();
        }
        let (_, groups) = EventStore::open(&path).unwrap();
        assert_eq!(groups, vec![group("a"), group("b")]);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (store, _) = EventStore::open(&path).unwrap();
        store.append(&group("a")).unwrap();
        drop(store);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"session_id":"b","eve"#).unwrap();
        drop(f);

        let (store, groups) = EventStore::open(&path).unwrap();
        assert_eq!(groups, vec![group("a")]);
        store.append(&group("c")).unwrap();
        drop(store);
        let (_, groups) = EventStore::open(&path).unwrap();
        assert_eq!(groups, vec![group("a"), group("c")]);
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, "garbage\n{\"session_id\":\"a\",\"events\":[]}\n").unwrap();
        assert!(matches!(
            EventStore::open(&path),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }
}
