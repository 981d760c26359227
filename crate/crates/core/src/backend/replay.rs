use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, CompletionRequest};

pub const RECORDING_FORMAT: &str = "scriptalign-replay";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RecordingHeader {
    format: String,
    version: u32,
}

/// One line of a recording file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_hash: String,
    pub request: CompletionRequest,
    pub response: Completion,
}

#[derive(Debug, Default)]
struct Entries {
    order: Vec<String>,
    by_hash: BTreeMap<String, ReplayEntry>,
}

impl Entries {
    fn insert(&mut self, entry: ReplayEntry) -> Result<(), BackendError> {
        match self.by_hash.get(&entry.request_hash) {
            Some(existing) if existing.request != entry.request => Err(BackendError::Collision {
                hash: entry.request_hash,
            }),
            Some(_) => Ok(()),
            None => {
                self.order.push(entry.request_hash.clone());
                self.by_hash.insert(entry.request_hash.clone(), entry);
                Ok(())
            }
        }
    }

    fn write_to(&self, mut sink: impl Write) -> std::io::Result<()> {
        let header = RecordingHeader {
            format: RECORDING_FORMAT.into(),
            version: 1,
        };
        writeln!(sink, "{}", serde_json::to_string(&header)?)?;
        for hash in &self.order {
            writeln!(sink, "{}", serde_json::to_string(&self.by_hash[hash])?)?;
        }
        sink.flush()
    }
}

/// Answers from a recording, keyed by [`CompletionRequest::request_hash`].
#[derive(Debug, Default)]
pub struct ReplayMock {
    entries: Entries,
}

impl ReplayMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Result<Self, BackendError> {
        let mut mock = Self::new();
        for e in entries {
            mock.entries.insert(e)?;
        }
        Ok(mock)
    }

    /// Adds a canned response for `request`.
    pub fn insert(&mut self, request: CompletionRequest, text: impl Into<String>) -> Result<(), BackendError> {
        self.entries.insert(ReplayEntry {
            request_hash: request.request_hash(),
            request,
            response: Completion {
                text: text.into(),
                usage: Default::default(),
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = fs::File::open(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, BackendError> {
        let mut lines = reader.lines();
        let header: RecordingHeader = match lines.next() {
            Some(line) => {
                let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
                serde_json::from_str(&line).map_err(|e| BackendError::Io(format!("header: {e}")))?
            }
            None => return Err(BackendError::Io("recording has no header".into())),
        };
        if header.format != RECORDING_FORMAT {
            return Err(BackendError::Io(format!("unexpected format `{}`", header.format)));
        }
        let mut mock = Self::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| BackendError::Io(format!("entry {}: {e}", n + 1)))?;
            if entry.request.request_hash() != entry.request_hash {
                return Err(BackendError::Io(format!("entry {} has a stale hash", n + 1)));
            }
            mock.entries.insert(entry)?;
        }
        Ok(mock)
    }

    pub fn len(&self) -> usize {
        self.entries.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.order.is_empty()
    }

    pub fn write_to(&self, sink: impl Write) -> std::io::Result<()> {
        self.entries.write_to(sink)
    }
}

impl Backend for ReplayMock {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.check()?;
        let hash = request.request_hash();
        match self.entries.by_hash.get(&hash) {
            Some(entry) if &entry.request == request => Ok(entry.response.clone()),
            Some(_) => Err(BackendError::Collision { hash }),
            None => Err(BackendError::ReplayMiss {
                hash,
                tag: request.tag.clone(),
            }),
        }
    }
}

/// Passes calls through to another backend and keeps every
/// request/response pair, ready to be saved as a replay recording.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    entries: Mutex<Entries>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        RecordingBackend {
            inner,
            entries: Mutex::new(Entries::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("recording lock").order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_to(&self, sink: impl Write) -> std::io::Result<()> {
        self.entries.lock().expect("recording lock").write_to(sink)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let file = fs::File::create(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| BackendError::Io(e.to_string()))
    }

    pub fn into_replay(self) -> ReplayMock {
        ReplayMock {
            entries: self.entries.into_inner().expect("recording lock"),
        }
    }
}

impl Backend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let response = self.inner.complete(request)?;
        self.entries
            .lock()
            .expect("recording lock")
            .insert(ReplayEntry {
                request_hash: request.request_hash(),
                request: request.clone(),
                response: response.clone(),
            })?;
        Ok(response)
    }
}

/// Returns pre-set reply texts in order, regardless of the request. Used to
/// re-run engine steps from an event log without calling a real backend.
pub struct QueueBackend {
    replies: Mutex<VecDeque<String>>,
}

impl QueueBackend {
    pub fn new(replies: impl IntoIterator<Item = String>) -> Self {
        QueueBackend {
            replies: Mutex::new(replies.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("queue lock").len()
    }
}

impl Backend for QueueBackend {
    fn name(&self) -> &str {
        "queue"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.check()?;
        match self.replies.lock().expect("queue lock").pop_front() {
            Some(text) => Ok(Completion {
                text,
                usage: Default::default(),
            }),
            None => Err(BackendError::ReplayMiss {
                hash: request.request_hash(),
                tag: request.tag.clone(),
            }),
        }
    }
}

/// Forwards to `inner` and remembers the reply texts and tags of one step.
pub struct TapBackend<'a> {
    inner: &'a dyn Backend,
    log: Mutex<Vec<(String, String)>>,
}

impl<'a> TapBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        TapBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// `(tag, reply text)` pairs in call order.
    pub fn into_log(self) -> Vec<(String, String)> {
        self.log.into_inner().expect("tap lock")
    }
}

impl Backend for TapBackend<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let out = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("tap lock")
            .push((request.tag.clone(), out.text.clone()));
        Ok(out)
    }
}
