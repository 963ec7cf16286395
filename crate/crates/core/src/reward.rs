//! Composite reward: an extrinsic scorer of the speaker's message plus an
//! intrinsic function of the feedback it received.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::conversation::{Action, ConversationState};
use crate::policy::{Policy, PolicyError};
use crate::remote::RemoteError;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("non-finite reward (extrinsic {extrinsic}, intrinsic {intrinsic})")]
    NonFinite { extrinsic: f64, intrinsic: f64 },
    #[error("{path}: {reason}")]
    Load { path: String, reason: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

/// Extrinsic, intrinsic and total reward of one (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    extrinsic: f64,
    intrinsic: f64,
    total: f64,
}

impl RewardBreakdown {
    pub fn extrinsic(&self) -> f64 {
        self.extrinsic
    }

    pub fn intrinsic(&self) -> f64 {
        self.intrinsic
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

pub fn combined_reward(extrinsic: f64, intrinsic: f64) -> Result<RewardBreakdown, RewardError> {
    if !extrinsic.is_finite() || !intrinsic.is_finite() {
        return Err(RewardError::NonFinite { extrinsic, intrinsic });
    }
    Ok(RewardBreakdown {
        extrinsic,
        intrinsic,
        total: extrinsic + intrinsic,
    })
}

/// Stand-in for a human-feedback reward model: scores `action` given `state`.
pub trait ExtrinsicScorer: Send + Sync {
    fn kind(&self) -> &'static str;
    fn score(&self, action: &Action, state: &ConversationState) -> Result<f64, RewardError>;
}

/// Intrinsic reward of receiving `feedback`, produced in `state` by the
/// other participant.
pub trait IntrinsicScorer: Send + Sync {
    fn kind(&self) -> &'static str;
    fn score(&self, feedback: &Action, state: &ConversationState, policy: &dyn Policy) -> Result<f64, RewardError>;
}

/// Lowercased whitespace tokens with ASCII punctuation stripped from both
/// edges. Tokens that are all punctuation are dropped.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreTableFile {
    #[serde(default)]
    default: f64,
    entries: HashMap<String, f64>,
}

fn read_table(path: &Path) -> Result<ScoreTableFile, RewardError> {
    let load_err = |reason: String| RewardError::Load {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let table: ScoreTableFile = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
    if !table.default.is_finite() || table.entries.values().any(|v| !v.is_finite()) {
        return Err(load_err("scores must be finite".into()));
    }
    Ok(table)
}

/// Token-sum lexicon scorer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexiconScorer {
    entries: HashMap<String, f64>,
    default: f64,
}

impl LexiconScorer {
    pub fn new(entries: HashMap<String, f64>, default: f64) -> Self {
        Self { entries, default }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Reads `{"default": x, "entries": {"token": score}}`. Tokens must be
    /// lowercase.
    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let table = read_table(path)?;
        if let Some(bad) = table.entries.keys().find(|k| **k != k.to_lowercase()) {
            return Err(RewardError::Load {
                path: path.display().to_string(),
                reason: format!("lexicon token `{bad}` is not lowercase"),
            });
        }
        Ok(Self::new(table.entries, table.default))
    }

    pub fn score_text(&self, text: &str) -> f64 {
        tokenize(text)
            .map(|t| self.entries.get(&t).copied().unwrap_or(self.default))
            .sum()
    }

    /// Copy with every entry and the default multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            default: self.default * factor,
        }
    }
}

impl ExtrinsicScorer for LexiconScorer {
    fn kind(&self) -> &'static str {
        "lexicon"
    }

    fn score(&self, action: &Action, _state: &ConversationState) -> Result<f64, RewardError> {
        Ok(self.score_text(action.content()))
    }
}

/// Curiosity as surprisal: `-log p(feedback | state)` under the shared policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurprisalIrf;

impl IntrinsicScorer for SurprisalIrf {
    fn kind(&self) -> &'static str {
        "surprisal"
    }

    fn score(&self, feedback: &Action, state: &ConversationState, policy: &dyn Policy) -> Result<f64, RewardError> {
        // Subtraction keeps a certain outcome at +0 rather than -0.
        Ok(0.0 - policy.log_prob(state, feedback)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullIrf;

impl IntrinsicScorer for NullIrf {
    fn kind(&self) -> &'static str {
        "null"
    }

    fn score(&self, _: &Action, _: &ConversationState, _: &dyn Policy) -> Result<f64, RewardError> {
        Ok(0.0)
    }
}

/// Exact-content lookup of the feedback message, for constructed worlds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableIrf {
    entries: HashMap<String, f64>,
    default: f64,
}

impl TableIrf {
    pub fn new(entries: HashMap<String, f64>) -> Self {
        Self { entries, default: 0.0 }
    }

    pub fn with_default(entries: HashMap<String, f64>, default: f64) -> Self {
        Self { entries, default }
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let table = read_table(path)?;
        Ok(Self::with_default(table.entries, table.default))
    }

    pub fn lookup(&self, content: &str) -> f64 {
        self.entries.get(content).copied().unwrap_or(self.default)
    }

    /// Copy with `scale * v + shift` applied to every value and the default.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), scale * v + shift)).collect(),
            default: scale * self.default + shift,
        }
    }
}

impl IntrinsicScorer for TableIrf {
    fn kind(&self) -> &'static str {
        "table"
    }

    fn score(&self, feedback: &Action, _: &ConversationState, _: &dyn Policy) -> Result<f64, RewardError> {
        Ok(self.lookup(feedback.content()))
    }
}

/// The reward configuration used by every scoring path.
pub struct RewardScorers {
    pub extrinsic: Box<dyn ExtrinsicScorer>,
    pub intrinsic: Box<dyn IntrinsicScorer>,
    /// Multiplier on the intrinsic term; the two terms have no common scale
    /// a priori.
    pub intrinsic_weight: f64,
}

impl RewardScorers {
    pub fn new(extrinsic: Box<dyn ExtrinsicScorer>, intrinsic: Box<dyn IntrinsicScorer>) -> Self {
        Self {
            extrinsic,
            intrinsic,
            intrinsic_weight: 1.0,
        }
    }

    pub fn with_intrinsic_weight(mut self, weight: f64) -> Self {
        self.intrinsic_weight = weight;
        self
    }

    pub fn combine(&self, extrinsic: f64, intrinsic: f64) -> Result<RewardBreakdown, RewardError> {
        combined_reward(extrinsic, self.intrinsic_weight * intrinsic)
    }
}
