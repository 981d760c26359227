//! Sessions: routing messages to engines, logging every step, and
//! rebuilding state from the log.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use scriptalign_core::backend::{
    Backend, BackendError, Completion, CompletionRequest, FreeformMock, QueueBackend, ScriptFaithfulMock,
    TapBackend,
};
use scriptalign_core::conversation::{
    input_text, record_bot_turn, start_session, step_session, EngineConfig, EngineState,
};
use scriptalign_core::metrics::{metrics_by_condition, MetricsReport, DEFAULT_MATCH_THRESHOLD};
use scriptalign_core::script::{Framework, ScriptLibrary};
use scriptalign_core::transcript::{Condition, Transcript};
use scriptalign_core::{BotTurn, EngineError, OptionButton, UserInput};

use crate::store::{BackendCall, Event, EventGroup, EventStore, StoreError};
use crate::survey::{default_instruments, Instrument, SurveyError, SurveyResponse, SurveySubmission};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("session is already complete")]
    SessionComplete,
    #[error("option `{0}` is not offered here")]
    InvalidOption(String),
    #[error("session is busy with another message, retry shortly")]
    Busy,
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(BackendError),
    #[error("{0}")]
    Engine(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("replaying session `{session_id}` diverged from its log: {message}")]
    ReplayDiverged { session_id: String, message: String },
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::UnknownTopic(_) => "unknown_topic",
            ServiceError::UnknownBackend(_) => "unknown_backend",
            ServiceError::SessionComplete => "session_complete",
            ServiceError::InvalidOption(_) => "invalid_option",
            ServiceError::Busy => "busy",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Range(_) => "range_error",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Backend(_) => "backend_error",
            ServiceError::Engine(_) => "engine_error",
            ServiceError::Store(_) => "store_error",
            ServiceError::ReplayDiverged { .. } => "replay_diverged",
        }
    }

    pub fn retriable(&self) -> bool {
        match self {
            ServiceError::Busy => true,
            ServiceError::Backend(e) => e.is_retriable(),
            _ => false,
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownTopic(t) => ServiceError::UnknownTopic(t),
            EngineError::SessionComplete => ServiceError::SessionComplete,
            EngineError::InvalidOption { option_id } => ServiceError::InvalidOption(option_id),
            EngineError::Backend(b) => ServiceError::Backend(b),
            other => ServiceError::Engine(other.to_string()),
        }
    }
}

impl From<SurveyError> for ServiceError {
    fn from(e: SurveyError) -> Self {
        match e {
            SurveyError::UnknownInstrument(_) => ServiceError::InvalidRequest(e.to_string()),
            SurveyError::Range { .. } => ServiceError::Range(e.to_string()),
            SurveyError::Incomplete(_) => ServiceError::InvalidRequest(e.to_string()),
        }
    }
}

/// Named backends sessions can choose from.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The two offline mocks under their usual names.
    pub fn with_mocks() -> Self {
        let mut r = Self::new();
        r.insert("script_faithful", Arc::new(ScriptFaithfulMock));
        r.insert("freeform", Arc::new(FreeformMock));
        r
    }

    pub fn insert(&mut self, name: impl Into<String>, backend: Arc<dyn Backend>) {
        self.backends.insert(name.into(), backend);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Backend>> {
        self.backends.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

/// Stands in for a backend in the rule-based condition, which never calls one.
struct NoBackend;

impl Backend for NoBackend {
    fn name(&self) -> &str {
        "none"
    }

    fn complete(&self, _: &CompletionRequest) -> Result<Completion, BackendError> {
        Err(BackendError::Protocol("this session has no backend".into()))
    }
}

#[derive(Clone)]
pub struct ServiceOptions {
    pub engine: EngineConfig,
    pub instruments: Vec<Instrument>,
    pub threshold: f64,
    pub clock: Clock,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            engine: EngineConfig::default(),
            instruments: default_instruments(),
            threshold: DEFAULT_MATCH_THRESHOLD,
            clock: Arc::new(Utc::now),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_id: String,
    pub title: String,
    pub framework: Framework,
    pub question_count: usize,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub turn: BotTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub condition: Condition,
    pub topic_id: String,
    pub backend: Option<String>,
    pub created_at: DateTime<Utc>,
    pub completed: bool,
    /// Buttons currently on screen.
    pub options: Vec<OptionButton>,
    pub transcript: Transcript,
    pub surveys: Vec<SurveyResponse>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptFilter {
    pub condition: Option<Condition>,
    pub topic_id: Option<String>,
}

struct SessionRecord {
    session_id: String,
    backend: Option<String>,
    created_at: DateTime<Utc>,
    state: EngineState,
    last_turn: BotTurn,
    transcript: Transcript,
    surveys: BTreeMap<String, SurveyResponse>,
}

impl SessionRecord {
    fn view(&self) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            condition: self.state.condition(),
            topic_id: self.state.topic_id().to_string(),
            backend: self.backend.clone(),
            created_at: self.created_at,
            completed: self.state.completed(),
            options: if self.state.completed() {
                Vec::new()
            } else {
                self.last_turn.options.clone()
            },
            transcript: self.transcript.clone(),
            surveys: self.surveys.values().cloned().collect(),
        }
    }
}

type SessionMap = HashMap<String, Arc<Mutex<SessionRecord>>>;

pub struct SessionService {
    library: ScriptLibrary,
    backends: BackendRegistry,
    options: ServiceOptions,
    store: EventStore,
    sessions: RwLock<SessionMap>,
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(bytes)
}

fn calls(log: Vec<(String, String)>) -> Vec<BackendCall> {
    log.into_iter().map(|(tag, text)| BackendCall { tag, text }).collect()
}

fn replay_backend(calls: &[BackendCall]) -> QueueBackend {
    QueueBackend::new(calls.iter().map(|c| c.text.clone()))
}

fn lock(record: &Mutex<SessionRecord>) -> std::sync::MutexGuard<'_, SessionRecord> {
    record.lock().unwrap_or_else(|p| p.into_inner())
}

/// Rebuilds a session's engine state from its events alone, feeding every
/// engine the backend replies recorded at the time.
pub fn replay_events(
    library: &ScriptLibrary,
    engine: &EngineConfig,
    events: &[Event],
) -> Result<EngineState, ServiceError> {
    let diverged = |message: String| ServiceError::ReplayDiverged {
        session_id: String::new(),
        message,
    };
    let mut state: Option<EngineState> = None;
    let mut pending_input: Option<&UserInput> = None;
    let mut created: Option<(Condition, &str)> = None;
    for event in events {
        match event {
            Event::Created {
                condition,
                topic_id,
                ..
            } => created = Some((*condition, topic_id)),
            Event::MessageIn { input, .. } => pending_input = Some(input),
            Event::Error { .. } => pending_input = None,
            Event::MessageOut {
                turn,
                backend_calls,
                ..
            } => {
                let backend = replay_backend(backend_calls);
                let (next, replayed) = match (&state, pending_input.take()) {
                    (None, None) => {
                        let (condition, topic) =
                            created.ok_or_else(|| diverged("reply before creation".into()))?;
                        start_session(library, condition, topic, &backend, engine)?
                    }
                    (Some(s), Some(input)) => step_session(library, s, input, &backend, engine)?,
                    _ => return Err(diverged("reply without a matching message".into())),
                };
                if &replayed != turn {
                    return Err(diverged("replayed bot turn differs from the logged one".into()));
                }
                state = Some(next);
            }
            Event::Completed { .. } | Event::SurveySubmitted { .. } => {}
        }
    }
    state.ok_or_else(|| diverged("no opening turn".into()))
}

impl SessionService {
    /// Opens the log at `log_path` and restores every session in it.
    pub fn open(
        library: ScriptLibrary,
        backends: BackendRegistry,
        options: ServiceOptions,
        log_path: &Path,
    ) -> Result<Self, ServiceError> {
        let (store, groups) = EventStore::open(log_path)?;
        let mut by_session: BTreeMap<String, Vec<Event>> = BTreeMap::new();
        let mut order = Vec::new();
        for group in groups {
            let entry = by_session.entry(group.session_id.clone()).or_insert_with(|| {
                order.push(group.session_id.clone());
                Vec::new()
            });
            entry.extend(group.events);
        }
        let mut sessions = HashMap::new();
        for id in order {
            let events = &by_session[&id];
            let record = rebuild(&library, &options.engine, &id, events)?;
            sessions.insert(id, Arc::new(Mutex::new(record)));
        }
        tracing::info!(sessions = sessions.len(), path = %log_path.display(), "session log restored");
        Ok(SessionService {
            library,
            backends,
            options,
            store,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn library(&self) -> &ScriptLibrary {
        &self.library
    }

    pub fn instruments(&self) -> &[Instrument] {
        &self.options.instruments
    }

    pub fn backend_names(&self) -> Vec<String> {
        self.backends.names().map(str::to_string).collect()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("sessions lock").len()
    }

    pub fn topics(&self) -> Vec<TopicSummary> {
        self.library
            .scripts()
            .map(|s| TopicSummary {
                topic_id: s.topic_id().to_string(),
                title: s.title().to_string(),
                framework: s.framework(),
                question_count: s.question_count(),
                node_count: s.len(),
            })
            .collect()
    }

    fn now(&self) -> DateTime<Utc> {
        (self.options.clock)()
    }

    fn resolve_backend(&self, condition: Condition, name: Option<&str>) -> Result<Arc<dyn Backend>, ServiceError> {
        match name {
            Some(n) => self
                .backends
                .get(n)
                .ok_or_else(|| ServiceError::UnknownBackend(n.to_string())),
            None if condition.needs_backend() => Err(ServiceError::InvalidRequest(format!(
                "condition `{condition}` needs a backend"
            ))),
            None => Ok(Arc::new(NoBackend)),
        }
    }

    fn record(&self, session_id: &str) -> Result<Arc<Mutex<SessionRecord>>, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(session_id.to_string()))
    }

    pub fn create_session(
        &self,
        condition: Condition,
        topic_id: &str,
        backend_name: Option<&str>,
    ) -> Result<CreatedSession, ServiceError> {
        self.library
            .get(topic_id)
            .map_err(|_| ServiceError::UnknownTopic(topic_id.to_string()))?;
        let backend = self.resolve_backend(condition, backend_name)?;
        let at = self.now();
        let tap = TapBackend::new(&*backend);
        let (state, turn) = start_session(&self.library, condition, topic_id, &tap, &self.options.engine)?;
        let session_id = new_session_id();
        let mut events = vec![
            Event::Created {
                condition,
                topic_id: topic_id.to_string(),
                backend: backend_name.map(str::to_string),
                at,
            },
            Event::MessageOut {
                turn: turn.clone(),
                backend_calls: calls(tap.into_log()),
                at: self.now(),
            },
        ];
        if state.completed() {
            events.push(Event::Completed { at: self.now() });
        }
        self.store.append(&EventGroup {
            session_id: session_id.clone(),
            events: events.clone(),
        })?;
        let record = rebuild_from(&self.library, &session_id, &events, state)?;
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session_id.clone(), Arc::new(Mutex::new(record)));
        Ok(CreatedSession { session_id, turn })
    }

    /// Runs one step under the session's lock. A second message arriving
    /// while a step is running is turned away with [`ServiceError::Busy`].
    pub fn post_message(&self, session_id: &str, input: UserInput) -> Result<BotTurn, ServiceError> {
        let record = self.record(session_id)?;
        let mut rec = match record.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if rec.state.completed() {
            return Err(ServiceError::SessionComplete);
        }
        let condition = rec.state.condition();
        let backend = self.resolve_backend(condition, rec.backend.as_deref())?;
        let at_in = self.now();
        let tap = TapBackend::new(&*backend);
        let result = step_session(&self.library, &rec.state, &input, &tap, &self.options.engine);
        let log = tap.into_log();
        let message_in = Event::MessageIn {
            input: input.clone(),
            at: at_in,
        };
        match result {
            Ok((state, turn)) => {
                let at_out = self.now();
                let mut events = vec![
                    message_in,
                    Event::MessageOut {
                        turn: turn.clone(),
                        backend_calls: calls(log),
                        at: at_out,
                    },
                ];
                if state.completed() {
                    events.push(Event::Completed { at: at_out });
                }
                self.store.append(&EventGroup {
                    session_id: session_id.to_string(),
                    events,
                })?;
                let script = self.library.get(rec.state.topic_id()).expect("session topic exists");
                let text = input_text(script, &input);
                rec.transcript.push_user(text, turn.user_match.clone(), at_in);
                record_bot_turn(&mut rec.transcript, &turn, at_out);
                rec.state = state;
                rec.last_turn = turn.clone();
                Ok(turn)
            }
            Err(e) => {
                let err = ServiceError::from(e);
                let group = EventGroup {
                    session_id: session_id.to_string(),
                    events: vec![
                        message_in,
                        Event::Error {
                            code: err.code().to_string(),
                            message: err.to_string(),
                            at: self.now(),
                        },
                    ],
                };
                if let Err(store_err) = self.store.append(&group) {
                    tracing::error!(%store_err, "could not log failed step");
                }
                Err(err)
            }
        }
    }

    pub fn get_session(&self, session_id: &str) -> Result<SessionView, ServiceError> {
        let record = self.record(session_id)?;
        let rec = lock(&record);
        Ok(rec.view())
    }

    pub fn engine_state(&self, session_id: &str) -> Result<EngineState, ServiceError> {
        let record = self.record(session_id)?;
        let rec = lock(&record);
        Ok(rec.state.clone())
    }

    pub fn submit_survey(&self, session_id: &str, submission: SurveySubmission) -> Result<SurveyResponse, ServiceError> {
        let record = self.record(session_id)?;
        let instrument = self
            .options
            .instruments
            .iter()
            .find(|i| i.id == submission.instrument_id)
            .ok_or_else(|| SurveyError::UnknownInstrument(submission.instrument_id.clone()))?;
        instrument.check(&submission.answers)?;
        let mut rec = match record.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if rec.surveys.contains_key(&submission.instrument_id) {
            return Err(ServiceError::Conflict(format!(
                "instrument `{}` was already submitted for this session",
                submission.instrument_id
            )));
        }
        let response = SurveyResponse {
            session_id: session_id.to_string(),
            instrument_id: submission.instrument_id,
            answers: submission.answers,
            submitted_at: self.now(),
        };
        self.store.append(&EventGroup {
            session_id: session_id.to_string(),
            events: vec![Event::SurveySubmitted {
                response: response.clone(),
            }],
        })?;
        rec.surveys.insert(response.instrument_id.clone(), response.clone());
        Ok(response)
    }

    /// Transcripts matching `filter`, oldest session first.
    pub fn export_transcripts(&self, filter: &TranscriptFilter) -> Vec<Transcript> {
        let records: Vec<_> = self.sessions.read().expect("sessions lock").values().cloned().collect();
        let mut out: Vec<(DateTime<Utc>, Transcript)> = records
            .iter()
            .map(|r| {
                let rec = lock(r);
                (rec.created_at, rec.transcript.clone())
            })
            .filter(|(_, t)| filter.condition.is_none_or(|c| c == t.condition))
            .filter(|(_, t)| filter.topic_id.as_ref().is_none_or(|id| id == &t.topic_id))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.session_id.cmp(&b.1.session_id)));
        out.into_iter().map(|(_, t)| t).collect()
    }

    pub fn metrics(&self, condition: Option<Condition>) -> Result<BTreeMap<Condition, MetricsReport>, ServiceError> {
        let transcripts = self.export_transcripts(&TranscriptFilter {
            condition,
            topic_id: None,
        });
        metrics_by_condition(&transcripts, &self.library, self.options.threshold)
            .map_err(|e| ServiceError::UnknownTopic(e.to_string()))
    }
}

fn rebuild(
    library: &ScriptLibrary,
    engine: &EngineConfig,
    session_id: &str,
    events: &[Event],
) -> Result<SessionRecord, ServiceError> {
    let state = replay_events(library, engine, events).map_err(|e| match e {
        ServiceError::ReplayDiverged { message, .. } => ServiceError::ReplayDiverged {
            session_id: session_id.to_string(),
            message,
        },
        other => ServiceError::ReplayDiverged {
            session_id: session_id.to_string(),
            message: other.to_string(),
        },
    })?;
    rebuild_from(library, session_id, events, state)
}

/// Derives everything but the engine state from the event list.
fn rebuild_from(
    library: &ScriptLibrary,
    session_id: &str,
    events: &[Event],
    state: EngineState,
) -> Result<SessionRecord, ServiceError> {
    let Some(Event::Created {
        condition,
        topic_id,
        backend,
        at,
    }) = events.first()
    else {
        return Err(ServiceError::ReplayDiverged {
            session_id: session_id.to_string(),
            message: "log does not start with creation".into(),
        });
    };
    let script = library
        .get(topic_id)
        .map_err(|_| ServiceError::UnknownTopic(topic_id.clone()))?;
    let mut transcript = Transcript::new(session_id, *condition, topic_id.clone());
    let mut surveys = BTreeMap::new();
    let mut last_turn = BotTurn::default();
    let mut pending: Option<(&UserInput, DateTime<Utc>)> = None;
    for event in events {
        match event {
            Event::MessageIn { input, at } => pending = Some((input, *at)),
            Event::Error { .. } => pending = None,
            Event::MessageOut { turn, at, .. } => {
                if let Some((input, at_in)) = pending.take() {
                    transcript.push_user(input_text(script, input), turn.user_match.clone(), at_in);
                }
                record_bot_turn(&mut transcript, turn, *at);
                last_turn = turn.clone();
            }
            Event::SurveySubmitted { response } => {
                surveys.insert(response.instrument_id.clone(), response.clone());
            }
            Event::Created { .. } | Event::Completed { .. } => {}
        }
    }
    transcript.completed = state.completed();
    Ok(SessionRecord {
        session_id: session_id.to_string(),
        backend: backend.clone(),
        created_at: *at,
        state,
        last_turn,
        transcript,
        surveys,
    })
}
