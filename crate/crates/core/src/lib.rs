//! Deterministic simulator for the Norms Game played by language-model
//! agents through a tag-command protocol.
//!
//! * [`protocol`] parses tags embedded in free text into [`Command`]s.
//! * [`engine`] plays one round: test phase, announcement, discussion,
//!   settlement.
//! * [`agents`] holds personas and the decision backends (parametric,
//!   scripted, replay, model).
//! * [`gateway`] talks to chat/embedding services with record/replay.
//! * [`evolution`] runs trait and persona selection across epochs.
//! * [`analysis`] turns run logs into the figure data.
//! * [`experiment`] ties configs, seeds and output layout together.

pub mod agents;
pub mod analysis;
pub mod engine;
pub mod evolution;
pub mod experiment;
pub mod gateway;
pub mod protocol;
pub mod rng;
pub mod runlog;

pub use agents::{AgentId, AgentProfile, Backend, BackendKind, Persona, TraitScore};
pub use engine::{
    play_round, settle_payoffs, DiscussionEvent, GameConfig, RoundLedger, RoundOutcome,
    TestPhaseRecord,
};
pub use gateway::{Gateway, GatewayConfig, GatewayMode};
pub use protocol::{parse_utterance, render_command, Command, ParseError, ParseErrorKind, Phase, Roster};
pub use runlog::{EventSink, LogRecord, RunLog};
