//! Generative policies `a = M(s)`.
//!
//! Every policy generates; enumerable ones also expose their finite
//! candidate set with log-probabilities, which is what the exact objective
//! oracle needs. Only [`TemplatePolicy`] is trainable.

mod echo;
mod template;

pub use echo::EchoPolicy;
pub use template::{feature_bucket, Checkpoint, TemplatePolicy, DEFAULT_FEATURES};

use thiserror::Error;

use crate::conversation::{Action, ConversationError, ConversationState};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("`{0}` is not one of the policy's templates")]
    UnknownTemplate(String),
    #[error("{policy} policy does not support {capability}")]
    Unsupported {
        policy: &'static str,
        capability: &'static str,
    },
    #[error("generation failed: {0}")]
    GenerationFailure(String),
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
}

/// One REINFORCE training example.
#[derive(Debug, Clone)]
pub struct PolicyExample {
    pub state: ConversationState,
    pub action: Action,
    pub advantage: f64,
}

pub trait Policy: Send + Sync {
    /// Registry name of the implementation.
    fn kind(&self) -> &'static str;

    /// Produces the next message for `state.next_speaker()`. Deterministic in
    /// `(state, seed, weights)` for local policies.
    fn generate(&self, state: &ConversationState, seed: u64) -> Result<Action, PolicyError>;

    /// Natural-log probability of `action` being generated in `state`.
    fn log_prob(&self, _state: &ConversationState, _action: &Action) -> Result<f64, PolicyError> {
        Err(PolicyError::Unsupported {
            policy: self.kind(),
            capability: "log_prob",
        })
    }

    /// Full support of the action distribution, if finite and known.
    fn candidates(&self, _state: &ConversationState) -> Option<Vec<Action>> {
        None
    }

    /// Trainable view, for policies that support `update`.
    fn as_template(&self) -> Option<&TemplatePolicy> {
        None
    }
}
