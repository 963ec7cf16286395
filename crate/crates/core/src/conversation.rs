//! Two-party conversations: authored messages, state construction by
//! appending actions, and perspective switching by relabelling authors.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConversationError {
    #[error("participant id must be non-empty")]
    EmptyParticipant,
    #[error("a conversation needs two distinct participants, got `{0}` twice")]
    SameParticipants(String),
    #[error("action authored by `{found}` but `{expected}` is due to speak")]
    AuthorMismatch { expected: String, found: String },
    #[error("action has turn {found}, expected {expected}")]
    TurnMismatch { expected: usize, found: usize },
    #[error("`{0}` is not a participant of this conversation")]
    UnknownParticipant(String),
    #[error("message {turn} breaks alternation: `{author}` spoke twice in a row")]
    NonAlternating { turn: usize, author: String },
}

/// Opaque, non-empty participant label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ParticipantId(String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Result<Self, ConversationError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ConversationError::EmptyParticipant);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ParticipantId {
    type Error = ConversationError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ParticipantId> for String {
    fn from(value: ParticipantId) -> Self {
        value.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The two seats of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Participants {
    first: ParticipantId,
    second: ParticipantId,
}

impl Participants {
    pub fn new(first: ParticipantId, second: ParticipantId) -> Result<Self, ConversationError> {
        if first == second {
            return Err(ConversationError::SameParticipants(first.0));
        }
        Ok(Self { first, second })
    }

    pub fn first(&self) -> &ParticipantId {
        &self.first
    }

    pub fn second(&self) -> &ParticipantId {
        &self.second
    }

    pub fn contains(&self, id: &ParticipantId) -> bool {
        *id == self.first || *id == self.second
    }

    pub fn other(&self, id: &ParticipantId) -> Result<&ParticipantId, ConversationError> {
        if *id == self.first {
            Ok(&self.second)
        } else if *id == self.second {
            Ok(&self.first)
        } else {
            Err(ConversationError::UnknownParticipant(id.0.clone()))
        }
    }

    /// Label swap used by the perspective switch. Labels outside the pair
    /// cannot occur in validated values and are returned unchanged.
    fn swap(&self, id: &ParticipantId) -> ParticipantId {
        self.other(id).cloned().unwrap_or_else(|_| id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub author: ParticipantId,
    /// Global 0-based position within the conversation.
    pub turn: usize,
    pub content: String,
}

/// A message produced by a policy for the participant due to speak.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub message: Message,
}

impl Action {
    pub fn new(author: ParticipantId, turn: usize, content: impl Into<String>) -> Self {
        Self {
            message: Message {
                author,
                turn,
                content: content.into(),
            },
        }
    }

    pub fn author(&self) -> &ParticipantId {
        &self.message.author
    }

    pub fn content(&self) -> &str {
        &self.message.content
    }

    pub fn turn(&self) -> usize {
        self.message.turn
    }
}

/// Chronological message history plus the participant due to speak next.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConversationState {
    participants: Participants,
    messages: Vec<Message>,
    next_speaker: ParticipantId,
}

impl ConversationState {
    pub fn empty(participants: Participants, next_speaker: ParticipantId) -> Result<Self, ConversationError> {
        if !participants.contains(&next_speaker) {
            return Err(ConversationError::UnknownParticipant(next_speaker.0));
        }
        Ok(Self {
            participants,
            messages: Vec::new(),
            next_speaker,
        })
    }

    /// Builds a state from `(author, content)` pairs, assigning turn indices
    /// and checking strict alternation. `next_speaker` is only consulted for
    /// an empty history.
    pub fn from_turns<I, S>(
        participants: Participants,
        turns: I,
        next_speaker_if_empty: ParticipantId,
    ) -> Result<Self, ConversationError>
    where
        I: IntoIterator<Item = (ParticipantId, S)>,
        S: Into<String>,
    {
        let mut state = Self::empty(participants, next_speaker_if_empty)?;
        for (turn, (author, content)) in turns.into_iter().enumerate() {
            if !state.participants.contains(&author) {
                return Err(ConversationError::UnknownParticipant(author.0));
            }
            if let Some(last) = state.messages.last() {
                if last.author == author {
                    return Err(ConversationError::NonAlternating {
                        turn,
                        author: author.0,
                    });
                }
            }
            state.next_speaker = state.participants.swap(&author);
            state.messages.push(Message {
                author,
                turn,
                content: content.into(),
            });
        }
        Ok(state)
    }

    pub fn participants(&self) -> &Participants {
        &self.participants
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn next_speaker(&self) -> &ParticipantId {
        &self.next_speaker
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    /// Builds an action for the participant due to speak, with the next
    /// turn index.
    pub fn action(&self, content: impl Into<String>) -> Action {
        Action::new(self.next_speaker.clone(), self.messages.len(), content)
    }

    /// State seen by the responder after `action` is taken.
    pub fn append_action(&self, action: &Action) -> Result<ConversationState, ConversationError> {
        let msg = &action.message;
        if msg.author != self.next_speaker {
            return Err(ConversationError::AuthorMismatch {
                expected: self.next_speaker.0.clone(),
                found: msg.author.0.clone(),
            });
        }
        if msg.turn != self.messages.len() {
            return Err(ConversationError::TurnMismatch {
                expected: self.messages.len(),
                found: msg.turn,
            });
        }
        let mut messages = Vec::with_capacity(self.messages.len() + 1);
        messages.extend_from_slice(&self.messages);
        messages.push(msg.clone());
        Ok(ConversationState {
            participants: self.participants.clone(),
            messages,
            next_speaker: self.participants.swap(&self.next_speaker),
        })
    }

    /// Relabels every author (and the next speaker) with the other
    /// participant. Order, turns and content are untouched.
    pub fn switch_perspective(&self) -> ConversationState {
        ConversationState {
            participants: self.participants.clone(),
            messages: self
                .messages
                .iter()
                .map(|m| Message {
                    author: self.participants.swap(&m.author),
                    turn: m.turn,
                    content: m.content.clone(),
                })
                .collect(),
            next_speaker: self.participants.swap(&self.next_speaker),
        }
    }

    /// Tags each message SELF or OTHER relative to `viewpoint`.
    pub fn render_for_speaker(&self, viewpoint: &ParticipantId) -> Result<RoleTranscript, ConversationError> {
        if !self.participants.contains(viewpoint) {
            return Err(ConversationError::UnknownParticipant(viewpoint.0.clone()));
        }
        Ok(RoleTranscript(
            self.messages
                .iter()
                .map(|m| RoleMessage {
                    role: if m.author == *viewpoint { Role::Own } else { Role::Other },
                    content: m.content.clone(),
                })
                .collect(),
        ))
    }
}

/// Swaps the author of an action between the two participants.
pub fn switch_perspective_action(action: &Action, participants: &Participants) -> Action {
    Action {
        message: Message {
            author: participants.swap(&action.message.author),
            turn: action.message.turn,
            content: action.message.content.clone(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Written by the viewpoint participant.
    Own,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RoleMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RoleTranscript(pub Vec<RoleMessage>);

impl RoleTranscript {
    pub fn messages(&self) -> &[RoleMessage] {
        &self.0
    }

    pub fn last_other(&self) -> Option<&RoleMessage> {
        self.0.iter().rev().find(|m| m.role == Role::Other)
    }
}

/// One line of a transcript JSONL file. Field order is the canonical
/// serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptLine {
    pub conv_id: String,
    pub turn: usize,
    pub author: String,
    pub content: String,
}

impl TranscriptLine {
    pub fn from_message(conv_id: &str, message: &Message) -> Self {
        Self {
            conv_id: conv_id.to_owned(),
            turn: message.turn,
            author: message.author.0.clone(),
            content: message.content.clone(),
        }
    }
}

pub fn write_transcript<W: Write>(out: &mut W, conv_id: &str, messages: &[Message]) -> std::io::Result<()> {
    for m in messages {
        let line = serde_json::to_string(&TranscriptLine::from_message(conv_id, m))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses transcript JSONL; blank lines are skipped, missing fields rejected.
pub fn read_transcript<R: BufRead>(input: R) -> Result<Vec<TranscriptLine>, TranscriptError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|source| TranscriptError::Parse { line: idx + 1, source })?;
        out.push(parsed);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn pid(s: &str) -> ParticipantId {
        ParticipantId::new(s).unwrap()
    }

    pub fn ab() -> Participants {
        Participants::new(pid("A"), pid("B")).unwrap()
    }

    fn hi_state() -> ConversationState {
        ConversationState::from_turns(ab(), [(pid("A"), "hi")], pid("A")).unwrap()
    }

    #[test]
    fn append_flips_speaker() {
        let s = hi_state();
        assert_eq!(s.next_speaker(), &pid("B"));
        let next = s.append_action(&Action::new(pid("B"), 1, "hello")).unwrap();
        assert_eq!(next.len(), 2);
        assert_eq!(next.messages()[1].content, "hello");
        assert_eq!(next.next_speaker(), &pid("A"));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn append_on_empty_state() {
        let s = ConversationState::empty(ab(), pid("A")).unwrap();
        let next = s.append_action(&Action::new(pid("A"), 0, "hey")).unwrap();
        assert_eq!(next.messages(), &[Message { author: pid("A"), turn: 0, content: "hey".into() }]);
        assert_eq!(next.next_speaker(), &pid("B"));
    }

    #[test]
    fn append_rejects_wrong_author_and_turn() {
        let s = hi_state();
        assert!(matches!(
            s.append_action(&Action::new(pid("A"), 1, "again")),
            Err(ConversationError::AuthorMismatch { .. })
        ));
        assert_eq!(
            s.append_action(&Action::new(pid("B"), 5, "x")),
            Err(ConversationError::TurnMismatch { expected: 1, found: 5 })
        );
    }

    #[test]
    fn switch_swaps_labels_only() {
        let s = ConversationState::from_turns(ab(), [(pid("A"), "hi"), (pid("B"), "yo")], pid("A")).unwrap();
        let sw = s.switch_perspective();
        assert_eq!(sw.messages()[0].author, pid("B"));
        assert_eq!(sw.messages()[1].author, pid("A"));
        assert_eq!(sw.messages()[1].content, "yo");
        assert_eq!(sw.next_speaker(), &pid("B"));
        assert_eq!(sw.switch_perspective(), s);
    }

    #[test]
    fn switch_empty_state() {
        let s = ConversationState::empty(ab(), pid("A")).unwrap();
        let sw = s.switch_perspective();
        assert!(sw.is_empty());
        assert_eq!(sw.next_speaker(), &pid("B"));
    }

    #[test]
    fn switch_action_label_only() {
        let a = Action::new(pid("A"), 3, "ok");
        let sw = switch_perspective_action(&a, &ab());
        assert_eq!(sw, Action::new(pid("B"), 3, "ok"));
        assert_eq!(switch_perspective_action(&sw, &ab()), a);
        let pass = Action::new(pid("B"), 0, "");
        assert_eq!(switch_perspective_action(&pass, &ab()), Action::new(pid("A"), 0, ""));
    }

    #[test]
    fn render_roles() {
        let s = ConversationState::from_turns(ab(), [(pid("A"), "hi"), (pid("B"), "yo")], pid("A")).unwrap();
        let from_b = s.render_for_speaker(&pid("B")).unwrap();
        assert_eq!(from_b.messages()[0], RoleMessage { role: Role::Other, content: "hi".into() });
        assert_eq!(from_b.messages()[1], RoleMessage { role: Role::Own, content: "yo".into() });
        let from_a = s.render_for_speaker(&pid("A")).unwrap();
        assert_eq!(from_a.messages()[0].role, Role::Own);
        assert_eq!(s.switch_perspective().render_for_speaker(&pid("A")).unwrap(), from_b);
        assert_eq!(
            s.render_for_speaker(&pid("C")),
            Err(ConversationError::UnknownParticipant("C".into()))
        );
    }

    #[test]
    fn from_turns_rejects_repeated_author() {
        let err = ConversationState::from_turns(ab(), [(pid("A"), "x"), (pid("A"), "y")], pid("A")).unwrap_err();
        assert_eq!(err, ConversationError::NonAlternating { turn: 1, author: "A".into() });
    }

    #[test]
    fn participants_validation() {
        assert_eq!(ParticipantId::new(""), Err(ConversationError::EmptyParticipant));
        assert!(Participants::new(pid("A"), pid("A")).is_err());
    }

    #[test]
    fn transcript_jsonl_key_order_and_strictness() {
        let s = ConversationState::from_turns(ab(), [(pid("A"), "hi \"there\"")], pid("A")).unwrap();
        let mut buf = Vec::new();
        write_transcript(&mut buf, "c1", s.messages()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "{\"conv_id\":\"c1\",\"turn\":0,\"author\":\"A\",\"content\":\"hi \\\"there\\\"\"}\n");
        let back = read_transcript(text.as_bytes()).unwrap();
        assert_eq!(back[0].content, "hi \"there\"");

        let missing = "{\"conv_id\":\"c1\",\"turn\":0,\"author\":\"A\"}\n";
        assert!(matches!(read_transcript(missing.as_bytes()), Err(TranscriptError::Parse { line: 1, .. })));
    }
}
