//! Conversation prompts the model is trained on, and their JSONL ingestion.
//!
//! Each input line is `{"conv_id": .., "messages": [{"author", "content"}, ..]}`
//! with an optional `"model"` naming the model's participant id (needed
//! only when the target is the sole author so far; defaults to `model`).
//! The last message must be the target's, so the model acts first.

use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::conversation::{ConversationError, ConversationState, ParticipantId, Participants};

pub const DEFAULT_MODEL_ID: &str = "model";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("prompt dataset is empty")]
    EmptyDataset,
}

/// Ordered prompt states; each has the model due to speak.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDataset {
    prompts: Vec<ConversationState>,
}

impl PromptDataset {
    pub fn new(prompts: Vec<ConversationState>) -> Result<Self, IngestError> {
        if prompts.is_empty() {
            return Err(IngestError::EmptyDataset);
        }
        Ok(Self { prompts })
    }

    pub fn from_prompts_unchecked(prompts: Vec<ConversationState>) -> Self {
        Self { prompts }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ConversationState> {
        self.prompts.iter()
    }

    pub fn get(&self, index: usize) -> Option<&ConversationState> {
        self.prompts.get(index)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptLine {
    conv_id: String,
    messages: Vec<PromptMessage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptMessage {
    author: String,
    content: String,
}

/// A prompt line that was skipped in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: PromptDataset,
    pub conv_ids: Vec<String>,
    pub skipped: Vec<Diagnostic>,
}

fn parse_prompt(text: &str) -> Result<(String, ConversationState), String> {
    let line: PromptLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let last = line.messages.last().ok_or("prompt has no messages")?;
    let target = ParticipantId::new(last.author.clone()).map_err(|e| e.to_string())?;

    let mut model = None;
    for m in &line.messages {
        if m.author != target.as_str() {
            match &model {
                None => model = Some(m.author.clone()),
                Some(existing) if *existing != m.author => {
                    return Err(format!("more than two participants (`{existing}`, `{}`)", m.author))
                }
                _ => {}
            }
        }
    }
    let model = match (model, line.model) {
        (Some(found), Some(declared)) if found != declared => {
            return Err(format!("declared model `{declared}` but `{found}` wrote the other messages"))
        }
        (Some(found), _) => found,
        (None, Some(declared)) => declared,
        (None, None) => DEFAULT_MODEL_ID.to_owned(),
    };
    let model = ParticipantId::new(model).map_err(|e| e.to_string())?;
    let participants = Participants::new(target.clone(), model.clone()).map_err(|e| e.to_string())?;

    let mut turns = Vec::with_capacity(line.messages.len());
    for m in line.messages {
        turns.push((ParticipantId::new(m.author).map_err(|e| e.to_string())?, m.content));
    }
    let state = ConversationState::from_turns(participants, turns, model).map_err(|e| match e {
        ConversationError::NonAlternating { turn, author } => {
            format!("authors do not alternate: `{author}` wrote messages {} and {turn}", turn - 1)
        }
        other => other.to_string(),
    })?;
    Ok((line.conv_id, state))
}

/// Parses prompt JSONL. Strict mode stops at the first bad line; lenient
/// mode skips it and records a diagnostic. Blank lines are ignored.
pub fn ingest_reader<R: BufRead>(input: R, lenient: bool) -> Result<Ingested, IngestError> {
    let mut prompts = Vec::new();
    let mut conv_ids = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| IngestError::Line {
            line: line_no,
            reason: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        match parse_prompt(&text) {
            Ok((id, state)) => {
                conv_ids.push(id);
                prompts.push(state);
            }
            Err(reason) if lenient => skipped.push(Diagnostic { line: line_no, reason }),
            Err(reason) => return Err(IngestError::Line { line: line_no, reason }),
        }
    }
    Ok(Ingested {
        dataset: PromptDataset::new(prompts)?,
        conv_ids,
        skipped,
    })
}

pub fn ingest_prompts(path: &Path, lenient: bool) -> Result<Ingested, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file), lenient)
}
