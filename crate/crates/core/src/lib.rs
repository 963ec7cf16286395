//! Self-play training of a kindness motivation for conversational policies.
//!
//! A policy plays both seats of a two-party conversation. After acting, the
//! model lets the same policy answer for its conversation partner, swaps
//! the author labels so it occupies the partner's seat, and is rewarded
//! with the reward the partner would have received.

pub mod conversation;
pub mod dataset;
pub mod engine;
pub mod policy;
pub mod registry;
pub mod remote;
pub mod reward;
pub mod seed;

pub use conversation::{Action, ConversationState, Message, ParticipantId, Participants};
pub use engine::{EngineError, Exchange, Kindness, Motivation, ObjectiveEstimate, Selfish};
pub use policy::{EchoPolicy, Policy, PolicyError, TemplatePolicy};
pub use reward::{RewardBreakdown, RewardScorers};
