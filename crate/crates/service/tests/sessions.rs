use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};

use scriptalign_core::backend::{Backend, BackendError, Completion, CompletionRequest, ScriptFaithfulMock};
use scriptalign_core::metrics::metrics_by_condition;
use scriptalign_core::script::ScriptLibrary;
use scriptalign_core::transcript::Condition;
use scriptalign_core::{BotTurn, UserInput};
use scriptalign_service::{
    Answer, BackendRegistry, Event, EventStore, ServiceError, ServiceOptions, SessionService, SurveySubmission,
    TranscriptFilter,
};

fn library() -> ScriptLibrary {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/sample");
    ScriptLibrary::load(&dir).unwrap()
}

fn open(path: &Path) -> SessionService {
    SessionService::open(library(), BackendRegistry::with_mocks(), ServiceOptions::default(), path).unwrap()
}

fn backend_for(condition: Condition) -> Option<&'static str> {
    match condition {
        Condition::RuleBased => None,
        Condition::PureLlm => Some("freeform"),
        Condition::SagPrompt | Condition::Ssag => Some("script_faithful"),
    }
}

/// Clicks the first button when there is one, otherwise types a reply.
fn next_input(turn: &BotTurn, condition: Condition) -> UserInput {
    match turn.options.first() {
        Some(o) if condition != Condition::Ssag && condition != Condition::PureLlm => UserInput::option(&o.option_id),
        Some(o) => UserInput::text(&o.label),
        None => UserInput::text("I think I could manage a short walk."),
    }
}

fn drive(svc: &SessionService, condition: Condition, topic: &str, max_steps: usize) -> String {
    let created = svc.create_session(condition, topic, backend_for(condition)).unwrap();
    let mut turn = created.turn;
    for _ in 0..max_steps {
        if turn.done {
            break;
        }
        turn = svc.post_message(&created.session_id, next_input(&turn, condition)).unwrap();
    }
    created.session_id
}

#[test]
fn replay_rebuilds_every_condition_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let mut ids = Vec::new();
    {
        let svc = open(&path);
        for condition in Condition::ALL {
            for topic in ["confidence_rating", "activity_goals"] {
                let id = drive(&svc, condition, topic, 6);
                let state = serde_json::to_string(&svc.engine_state(&id).unwrap()).unwrap();
                ids.push((id.clone(), state, svc.get_session(&id).unwrap()));
            }
        }
    }
    let svc = open(&path);
    assert_eq!(svc.session_count(), ids.len());
    for (id, state, view) in ids {
        assert_eq!(serde_json::to_string(&svc.engine_state(&id).unwrap()).unwrap(), state);
        assert_eq!(svc.get_session(&id).unwrap(), view);
    }
}

#[test]
fn restored_sessions_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let id = {
        let svc = open(&path);
        drive(&svc, Condition::RuleBased, "confidence_rating", 1)
    };
    let svc = open(&path);
    let view = svc.get_session(&id).unwrap();
    assert!(!view.completed);
    let input = match view.options.first() {
        Some(o) => UserInput::option(&o.option_id),
        None => UserInput::text("More walking, maybe."),
    };
    let turn = svc.post_message(&id, input).unwrap();
    assert!(!turn.texts.is_empty());
}

#[test]
fn torn_write_loses_only_the_unfinished_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let (id, before) = {
        let svc = open(&path);
        let id = drive(&svc, Condition::SagPrompt, "confidence_rating", 2);
        (id.clone(), svc.get_session(&id).unwrap())
    };
    let mut bytes = std::fs::read(&path).unwrap();
    let intact = bytes.len();
    bytes.extend_from_slice(format!(r#"{{"session_id":"{id}","events":[{{"type":"message_in""#).as_bytes());
    std::fs::write(&path, &bytes).unwrap();

    let svc = open(&path);
    assert_eq!(svc.get_session(&id).unwrap(), before);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, intact);
}

#[test]
fn completion_and_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let svc = open(&path);
    let id = drive(&svc, Condition::RuleBased, "confidence_rating", 50);
    assert!(svc.get_session(&id).unwrap().completed);
    assert!(matches!(
        svc.post_message(&id, UserInput::text("hello")),
        Err(ServiceError::SessionComplete)
    ));

    let created = svc.create_session(Condition::RuleBased, "confidence_rating", None).unwrap();
    let before = svc.engine_state(&created.session_id).unwrap();
    let err = svc
        .post_message(&created.session_id, UserInput::option("no_such_option"))
        .unwrap_err();
    assert!(matches!(err, ServiceError::InvalidOption(_)));
    assert_eq!(svc.engine_state(&created.session_id).unwrap(), before);

    assert!(matches!(
        svc.post_message("missing", UserInput::text("hi")),
        Err(ServiceError::NotFound(_))
    ));
    assert!(matches!(
        svc.create_session(Condition::Ssag, "nope", Some("script_faithful")),
        Err(ServiceError::UnknownTopic(_))
    ));
    assert!(matches!(
        svc.create_session(Condition::Ssag, "confidence_rating", Some("nope")),
        Err(ServiceError::UnknownBackend(_))
    ));
    drop(svc);

    // The rejected message is in the log and replays as a no-op.
    let svc = open(&path);
    assert_eq!(svc.engine_state(&created.session_id).unwrap(), before);
}

#[test]
fn ssag_steps_log_predict_and_generate_calls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let svc = open(&path);
    let created = svc
        .create_session(Condition::Ssag, "confidence_rating", Some("script_faithful"))
        .unwrap();
    svc.post_message(&created.session_id, UserInput::text("Maybe a six."))
        .unwrap();
    drop(svc);

    let (_, groups) = EventStore::open(&path).unwrap();
    let Event::MessageOut { backend_calls, .. } = &groups[1].events[1] else {
        panic!("expected a bot reply");
    };
    let tags: Vec<&str> = backend_calls.iter().map(|c| c.tag.as_str()).collect();
    assert_eq!(tags.len(), 2, "{tags:?}");
    assert_eq!(tags[0], "ssag.predict");
}

#[test]
fn surveys() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(&dir.path().join("events.jsonl"));
    let id = svc.create_session(Condition::RuleBased, "confidence_rating", None).unwrap().session_id;
    let usability = svc.instruments()[0].clone();
    let submission = |v: i64| SurveySubmission {
        instrument_id: usability.id.clone(),
        answers: usability
            .items
            .iter()
            .map(|i| Answer {
                item_id: i.id.clone(),
                likert: v,
            })
            .collect(),
    };
    assert!(matches!(svc.submit_survey(&id, submission(6)), Err(ServiceError::Range(_))));
    assert!(matches!(svc.submit_survey("missing", submission(3)), Err(ServiceError::NotFound(_))));
    svc.submit_survey(&id, submission(3)).unwrap();
    assert!(matches!(svc.submit_survey(&id, submission(4)), Err(ServiceError::Conflict(_))));
    assert_eq!(svc.get_session(&id).unwrap().surveys.len(), 1);
}

#[test]
fn export_filter_and_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(&dir.path().join("events.jsonl"));
    assert!(svc.export_transcripts(&TranscriptFilter::default()).is_empty());
    drive(&svc, Condition::RuleBased, "confidence_rating", 50);
    drive(&svc, Condition::SagPrompt, "activity_goals", 50);
    drive(&svc, Condition::Ssag, "confidence_rating", 20);

    let only_ssag = svc.export_transcripts(&TranscriptFilter {
        condition: Some(Condition::Ssag),
        topic_id: None,
    });
    assert_eq!(only_ssag.len(), 1);

    let all = svc.export_transcripts(&TranscriptFilter::default());
    assert_eq!(all.len(), 3);
    for t in &all {
        t.check().unwrap();
    }
    let offline = metrics_by_condition(&all, svc.library(), 0.6).unwrap();
    assert_eq!(svc.metrics(None).unwrap(), offline);
    assert_eq!(offline[&Condition::RuleBased].metric1_ratio, 1.0);
    assert_eq!(offline[&Condition::RuleBased].metric2_ratio, 1.0);
}

/// Blocks inside `complete` once armed, until the test lets it go.
struct GatedBackend {
    armed: AtomicBool,
    entered: Barrier,
    release: Barrier,
}

impl Backend for GatedBackend {
    fn name(&self) -> &str {
        "gated"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if self.armed.swap(false, Ordering::SeqCst) {
            self.entered.wait();
            self.release.wait();
        }
        ScriptFaithfulMock.complete(request)
    }
}

#[test]
fn concurrent_messages_to_one_session_get_busy() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Arc::new(GatedBackend {
        armed: AtomicBool::new(false),
        entered: Barrier::new(2),
        release: Barrier::new(2),
    });
    let mut backends = BackendRegistry::with_mocks();
    backends.insert("gated", gate.clone());
    let svc = Arc::new(
        SessionService::open(library(), backends, ServiceOptions::default(), &dir.path().join("e.jsonl")).unwrap(),
    );
    let created = svc
        .create_session(Condition::SagPrompt, "confidence_rating", Some("gated"))
        .unwrap();
    let option = created.turn.options[0].option_id.clone();
    let other = svc.create_session(Condition::RuleBased, "confidence_rating", None).unwrap();

    gate.armed.store(true, Ordering::SeqCst);
    let worker = {
        let svc = svc.clone();
        let id = created.session_id.clone();
        let option = option.clone();
        std::thread::spawn(move || svc.post_message(&id, UserInput::option(option)))
    };
    gate.entered.wait();
    let err = svc
        .post_message(&created.session_id, UserInput::option(&option))
        .unwrap_err();
    assert!(matches!(err, ServiceError::Busy));
    assert!(err.retriable());
    // Other sessions are unaffected while one is busy.
    svc.post_message(&other.session_id, UserInput::option(&other.turn.options[0].option_id))
        .unwrap();
    gate.release.wait();
    worker.join().unwrap().unwrap();

    let view = svc.get_session(&created.session_id).unwrap();
    assert_eq!(view.transcript.user_turns().count(), 1);
}
