//! Intent translation and the near-RT coordination loop.
//!
//! A supervisor turns operator text into an [`ObjectiveSpec`] and routes one
//! message to each near-RT agent. Every loop the user-weighting agent sets
//! priority weights, the O-RU management agent picks the active set, the
//! precoder runs with those weights, and the monitoring agent checks the
//! minimum rates and feeds back boosts or penalty raises.

pub mod bus;
pub mod coordinator;
pub mod intent;
pub mod reasoner;
pub mod steps;

pub use bus::{AgentId, Bus, Interface, Message};
pub use coordinator::{Coordinator, EpisodeOutcome, LoopMode, LoopSnapshot, MemoryContext, MemoryHit, World};
pub use intent::{random_objective, render_intent, translate_intent, Intent, Objective, ObjectiveSpec, RateConstraint};
pub use reasoner::{
    parse_remote_response, supervisor_prompt, GrammarBackend, IntentBackend, RemoteBackend, Translation, Transport,
    TransportError,
};
pub use steps::{
    monitoring_step, oru_management_step, user_weighting_step, AgentConfig, HistoryEntry, HistoryWindow,
    MonitorAction, MonitorDecision, OruContext, PenaltyState, WeightingState,
};
