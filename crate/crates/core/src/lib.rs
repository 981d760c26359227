//! Script-aligned dialogue delivery.
//!
//! Expert-authored dialogue trees ([`script`]) drive four conversation
//! conditions: a rule-based walker ([`rule`]), whole-tree prompting ([`sag`]),
//! strategy-then-retrieve generation ([`ssag`]) and an unaligned baseline
//! ([`pure`]). [`metrics`] scores the resulting transcripts.

pub mod backend;
pub mod context;
pub mod conversation;
pub mod metrics;
pub mod prompt;
pub mod pure;
pub mod rule;
pub mod sag;
pub mod script;
pub mod ssag;
pub mod strategy;
pub mod transcript;
pub mod turn;

pub use turn::{BotTurn, BubbleAnnotation, EngineError, OptionButton, UserInput};
