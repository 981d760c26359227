//! Synthetic users for batch runs.
//!
//! Every random choice comes from a ChaCha stream keyed by the batch seed
//! and the session index, and timestamps come from a logical clock, so a
//! batch run against a mock backend is byte-for-byte reproducible.

use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scriptalign_core::backend::Backend;
use scriptalign_core::conversation::{input_text, record_bot_turn, start_session, step_session, EngineConfig};
use scriptalign_core::script::ScriptLibrary;
use scriptalign_core::transcript::{Condition, Transcript};
use scriptalign_core::{BotTurn, EngineError, UserInput};

pub const DEFAULT_MAX_TURNS: usize = 40;
pub const DEFAULT_DIGRESS_EVERY: usize = 3;

const ON_TOPIC: &[&str] = &[
    "I think I could manage a short walk after dinner.",
    "Mostly time. My days get busy and exercise slips.",
    "My sister might join me if I asked her.",
    "I would like to feel less tired in the afternoons.",
    "Maybe three times a week to start with.",
    "Honestly I'm not sure, but I want to try.",
];

const OFF_TOPIC: &[&str] = &[
    "Did you see the game last night?",
    "What is the capital of Australia?",
    "Can you recommend a good pizza place?",
    "My phone battery keeps dying lately.",
    "Tell me a joke about penguins.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Compliant,
    Digressive,
    Adversarial,
}

impl FromStr for ProfileName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compliant" => Ok(ProfileName::Compliant),
            "digressive" => Ok(ProfileName::Digressive),
            "adversarial" => Ok(ProfileName::Adversarial),
            _ => Err(format!(
                "unknown profile `{s}` (expected compliant, digressive or adversarial)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoicePolicy {
    /// Uniformly random among the offered options.
    Random,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub name: ProfileName,
    pub choice_policy: ChoicePolicy,
    pub free_text_bank: Vec<String>,
    pub off_topic_bank: Vec<String>,
    pub max_turns: usize,
    /// Digressive users go off topic on every k-th message.
    pub digress_every: usize,
}

impl SimProfile {
    pub fn new(name: ProfileName, max_turns: usize, digress_every: usize) -> Result<Self, String> {
        if max_turns == 0 {
            return Err("max turns must be at least 1".into());
        }
        if digress_every == 0 {
            return Err("digression interval must be at least 1".into());
        }
        Ok(SimProfile {
            name,
            choice_policy: ChoicePolicy::Random,
            free_text_bank: ON_TOPIC.iter().map(|s| s.to_string()).collect(),
            off_topic_bank: OFF_TOPIC.iter().map(|s| s.to_string()).collect(),
            max_turns,
            digress_every,
        })
    }

    fn goes_off_topic(&self, user_turn: usize) -> bool {
        match self.name {
            ProfileName::Compliant => false,
            ProfileName::Digressive => (user_turn + 1) % self.digress_every == 0,
            ProfileName::Adversarial => true,
        }
    }

    /// The user's reply to `turn`, the `user_turn`-th message of the session.
    pub fn reply(&self, condition: Condition, turn: &BotTurn, user_turn: usize, rng: &mut ChaCha8Rng) -> UserInput {
        let pick = |bank: &[String], rng: &mut ChaCha8Rng| bank.choose(rng).cloned().unwrap_or_default();
        if self.goes_off_topic(user_turn) {
            return UserInput::Text(pick(&self.off_topic_bank, rng));
        }
        let option = match self.choice_policy {
            ChoicePolicy::Random => turn.options.choose(rng),
            ChoicePolicy::First => turn.options.first(),
        };
        match option {
            // Button-driven conditions take the click; the others only read text.
            Some(o) if matches!(condition, Condition::RuleBased | Condition::SagPrompt) => {
                UserInput::OptionId(o.option_id.clone())
            }
            Some(o) => UserInput::Text(o.label.clone()),
            None => UserInput::Text(pick(&self.free_text_bank, rng)),
        }
    }
}

/// Ticks one second per event from a fixed start.
struct LogicalClock {
    next: DateTime<Utc>,
}

impl LogicalClock {
    fn new() -> Self {
        LogicalClock {
            next: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    fn tick(&mut self) -> DateTime<Utc> {
        let now = self.next;
        self.next += Duration::seconds(1);
        now
    }
}

pub struct SessionSpec<'a> {
    pub session_id: String,
    pub condition: Condition,
    pub topic_id: &'a str,
    pub seed: u64,
    pub stream: u64,
}

/// Runs one session to completion or until the user has sent `max_turns`
/// messages.
pub fn simulate_session(
    library: &ScriptLibrary,
    spec: &SessionSpec<'_>,
    backend: &dyn Backend,
    config: &EngineConfig,
    profile: &SimProfile,
) -> Result<Transcript, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.stream);
    let mut clock = LogicalClock::new();
    let script = library.get(spec.topic_id)?;
    let mut transcript = Transcript::new(spec.session_id.clone(), spec.condition, spec.topic_id);

    let (mut state, mut turn) = start_session(library, spec.condition, spec.topic_id, backend, config)?;
    record_bot_turn(&mut transcript, &turn, clock.tick());
    for user_turn in 0..profile.max_turns {
        if state.completed() {
            break;
        }
        let input = profile.reply(spec.condition, &turn, user_turn, &mut rng);
        let at = clock.tick();
        (state, turn) = step_session(library, &state, &input, backend, config)?;
        transcript.push_user(input_text(script, &input), turn.user_match.clone(), at);
        record_bot_turn(&mut transcript, &turn, clock.tick());
    }
    transcript.completed = state.completed();
    Ok(transcript)
}

pub struct BatchSpec<'a> {
    pub condition: Condition,
    /// Sessions cycle through these topics in order.
    pub topics: Vec<&'a str>,
    pub sessions: usize,
    pub seed: u64,
    pub jobs: usize,
}

/// Runs a batch over up to `jobs` threads. Results are in session order
/// whatever the thread count.
pub fn simulate_batch(
    library: &ScriptLibrary,
    batch: &BatchSpec<'_>,
    backend: &dyn Backend,
    config: &EngineConfig,
    profile: &SimProfile,
) -> Result<Vec<Transcript>, EngineError> {
    if batch.topics.is_empty() {
        return Ok(Vec::new());
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Transcript, EngineError>>>> =
        Mutex::new((0..batch.sessions).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= batch.sessions {
            break;
        }
        let spec = SessionSpec {
            session_id: format!("{}-{}-{i:04}", batch.condition, batch.seed),
            condition: batch.condition,
            topic_id: batch.topics[i % batch.topics.len()],
            seed: batch.seed,
            stream: i as u64,
        };
        let result = simulate_session(library, &spec, backend, config, profile);
        results.lock().expect("results lock")[i] = Some(result);
    };
    std::thread::scope(|scope| {
        for _ in 1..batch.jobs.max(1) {
            scope.spawn(worker);
        }
        worker();
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every session ran"))
        .collect()
}

/// Writes `<session_id>.jsonl` files into `dir`.
pub fn write_transcripts(dir: &Path, transcripts: &[Transcript]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in transcripts {
        std::fs::write(dir.join(format!("{}.jsonl", t.session_id)), t.to_jsonl())?;
    }
    Ok(())
}
