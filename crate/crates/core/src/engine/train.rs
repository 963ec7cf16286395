use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conversation::{Action, ConversationState};
use crate::dataset::PromptDataset;
use crate::policy::{Policy, PolicyExample, TemplatePolicy};
use crate::reward::{RewardBreakdown, RewardScorers};
use crate::seed;

use super::{brute_force, objective_estimate, EngineError, Exchange, Kindness, Motivation, Selfish};

/// Which (state, action) pair receives the reward as advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateOn {
    /// The model's own action in its own state.
    #[default]
    Own,
    /// The target's reply in the switched target state, i.e. the model is
    /// trained to act as the target did.
    Switched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Exchanges per prompt.
    pub horizon: usize,
    pub use_baseline: bool,
    pub baseline_decay: f64,
    pub update_on: UpdateOn,
    /// Rollouts for the per-step objective when the policy is not
    /// enumerable.
    pub objective_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 0.1,
            epochs: 1,
            horizon: 1,
            use_baseline: true,
            baseline_decay: 0.9,
            update_on: UpdateOn::Own,
            objective_samples: 16,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1]");
        }
        if self.objective_samples == 0 {
            return bad("objective samples must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStepRecord {
    pub step: usize,
    pub prompt_index: usize,
    pub model_action: Action,
    pub target_response: Action,
    /// `reward.total` is the advantage before baseline subtraction.
    pub reward: RewardBreakdown,
    /// Expected reward of `model_action` under the pre-update policy.
    pub objective_estimate: f64,
    /// Full conversation after the exchange.
    pub conversation: ConversationState,
}

/// One metrics JSONL line; field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsLine {
    pub step: usize,
    pub prompt_index: usize,
    pub model_action: String,
    pub target_response: String,
    pub reward_ext: f64,
    pub reward_int: f64,
    pub reward_total: f64,
    pub objective_estimate: f64,
}

impl From<&TrainingStepRecord> for MetricsLine {
    fn from(r: &TrainingStepRecord) -> Self {
        Self {
            step: r.step,
            prompt_index: r.prompt_index,
            model_action: r.model_action.content().to_owned(),
            target_response: r.target_response.content().to_owned(),
            reward_ext: r.reward.extrinsic(),
            reward_int: r.reward.intrinsic(),
            reward_total: r.reward.total(),
            objective_estimate: r.objective_estimate,
        }
    }
}

pub fn write_metrics<W: Write>(out: &mut W, records: &[TrainingStepRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", serde_json::to_string(&MetricsLine::from(r))?)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub policy: TemplatePolicy,
    pub records: Vec<TrainingStepRecord>,
}

/// Self-play training loop. For every prompt (and every exchange up to the
/// horizon) the policy acts, the same policy replies for the target, the
/// motivation scores the exchange, and one REINFORCE step is taken.
/// `observe` sees the updated policy after every step.
pub fn train(
    initial: &TemplatePolicy,
    dataset: &PromptDataset,
    scorers: &RewardScorers,
    motivation: &dyn Motivation,
    config: &TrainingConfig,
    observe: &mut dyn FnMut(&TemplatePolicy, &TrainingStepRecord),
) -> Result<TrainingRun, EngineError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let mut policy = initial.clone();
    let mut baseline = 0.0;
    let mut records = Vec::with_capacity(dataset.len() * config.epochs * config.horizon);
    let mut step = 0usize;

    for _ in 0..config.epochs {
        for (prompt_index, prompt) in dataset.iter().enumerate() {
            let mut state = prompt.clone();
            for _ in 0..config.horizon {
                let model_action = policy.generate(&state, seed::derive(config.seed, seed::stream::MODEL_ACTION, step as u64))?;
                let exchange = Exchange::simulate(
                    &policy,
                    &state,
                    &model_action,
                    seed::derive(config.seed, seed::stream::TARGET_RESPONSE, step as u64),
                )?;
                let reward = motivation.score(&exchange, &policy, scorers)?;
                let objective = step_objective(motivation, &policy, scorers, &state, &model_action, config, step)?;

                let advantage = if config.use_baseline {
                    let adv = reward.total() - baseline;
                    baseline = config.baseline_decay * baseline + (1.0 - config.baseline_decay) * reward.total();
                    adv
                } else {
                    reward.total()
                };
                let example = match config.update_on {
                    UpdateOn::Own => PolicyExample {
                        state: exchange.model_state.clone(),
                        action: exchange.model_action.clone(),
                        advantage,
                    },
                    UpdateOn::Switched => {
                        let sw = exchange.switched();
                        PolicyExample {
                            state: sw.target_state,
                            action: sw.target_response,
                            advantage,
                        }
                    }
                };
                policy = policy.update(&[example], config.learning_rate)?;

                let conversation = exchange.conversation()?;
                let record = TrainingStepRecord {
                    step,
                    prompt_index,
                    model_action,
                    target_response: exchange.target_response,
                    reward,
                    objective_estimate: objective,
                    conversation: conversation.clone(),
                };
                observe(&policy, &record);
                records.push(record);
                state = conversation;
                step += 1;
            }
        }
    }
    Ok(TrainingRun { policy, records })
}

fn step_objective(
    motivation: &dyn Motivation,
    policy: &TemplatePolicy,
    scorers: &RewardScorers,
    state: &ConversationState,
    action: &Action,
    config: &TrainingConfig,
    step: usize,
) -> Result<f64, EngineError> {
    if policy.candidates(state).is_some() {
        return brute_force(motivation, policy, scorers, state, action);
    }
    let seed = seed::derive(config.seed, seed::stream::OBJECTIVE, step as u64);
    Ok(objective_estimate(motivation, policy, scorers, state, action, config.objective_samples, seed)?.mean)
}

/// Trains on the target's estimated reward.
pub fn train_naive_kindness(
    policy: &TemplatePolicy,
    dataset: &PromptDataset,
    scorers: &RewardScorers,
    config: &TrainingConfig,
) -> Result<TrainingRun, EngineError> {
    train(policy, dataset, scorers, &Kindness, config, &mut |_, _| {})
}

/// Same loop, rewarding the model's own outcome.
pub fn train_selfish_baseline(
    policy: &TemplatePolicy,
    dataset: &PromptDataset,
    scorers: &RewardScorers,
    config: &TrainingConfig,
) -> Result<TrainingRun, EngineError> {
    train(policy, dataset, scorers, &Selfish, config, &mut |_, _| {})
}
