use crate::conversation::{Action, ConversationState};

use super::{Policy, PolicyError};

const EMPTY_REPLY: &str = "hello";

/// Repeats the last message; says "hello" into an empty conversation.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoPolicy;

impl EchoPolicy {
    fn reply(state: &ConversationState) -> &str {
        state.last().map_or(EMPTY_REPLY, |m| m.content.as_str())
    }
}

impl Policy for EchoPolicy {
    fn kind(&self) -> &'static str {
        "echo"
    }

    fn generate(&self, state: &ConversationState, _seed: u64) -> Result<Action, PolicyError> {
        Ok(state.action(Self::reply(state)))
    }

    fn log_prob(&self, state: &ConversationState, action: &Action) -> Result<f64, PolicyError> {
        Ok(if action.content() == Self::reply(state) { 0.0 } else { f64::NEG_INFINITY })
    }

    fn candidates(&self, state: &ConversationState) -> Option<Vec<Action>> {
        Some(vec![state.action(Self::reply(state))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::tests::{ab, pid};

    #[test]
    fn echoes_last_message() {
        let s = ConversationState::from_turns(ab(), [(pid("A"), "x"), (pid("B"), "ping")], pid("A")).unwrap();
        let a = EchoPolicy.generate(&s, 0).unwrap();
        assert_eq!(a.author(), &pid("A"));
        assert_eq!(a.turn(), 2);
        assert_eq!(a.content(), "ping");
        assert_eq!(EchoPolicy.log_prob(&s, &a).unwrap(), 0.0);
    }

    #[test]
    fn says_hello_to_empty_state() {
        let s = ConversationState::empty(ab(), pid("B")).unwrap();
        assert_eq!(EchoPolicy.generate(&s, 9).unwrap().content(), "hello");
    }
}
