//! Session service: event-sourced session store and the JSON HTTP API in
//! front of the dialogue engines.

pub mod http;
pub mod service;
pub mod store;
pub mod survey;

pub use service::{
    replay_events, BackendRegistry, Clock, CreatedSession, ServiceError, ServiceOptions, SessionService,
    SessionView, TopicSummary, TranscriptFilter,
};
pub use store::{BackendCall, Event, EventGroup, EventStore, StoreError};
pub use survey::{default_instruments, Answer, Instrument, SurveyError, SurveyResponse, SurveySubmission};
