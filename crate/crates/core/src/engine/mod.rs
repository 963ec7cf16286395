//! Perspective-switched self-simulation.
//!
//! One *exchange* is the model acting in its state, followed by the shared
//! policy replying on behalf of the target. A [`Motivation`] turns an
//! exchange into a reward: [`Kindness`] scores it from the target's seat
//! (after swapping author labels), [`Selfish`] from the model's own seat.

mod train;

pub use train::{
    train, train_naive_kindness, train_selfish_baseline, write_metrics, MetricsLine, TrainingConfig, TrainingRun,
    TrainingStepRecord, UpdateOn,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::conversation::{switch_perspective_action, Action, ConversationError, ConversationState};
use crate::policy::{Policy, PolicyError};
use crate::reward::{RewardBreakdown, RewardError, RewardScorers};
use crate::seed;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("{0} policy is not enumerable")]
    NotEnumerable(&'static str),
    #[error("sample count must be >= 1")]
    NoSamples,
    #[error("prompt dataset is empty")]
    EmptyDataset,
    #[error("{0} policy cannot be trained")]
    NotTrainable(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// The four objects of one model/target exchange, in original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    /// State in which the model acts.
    pub model_state: ConversationState,
    pub model_action: Action,
    /// `model_state` with the model's action appended; the target is due.
    pub target_state: ConversationState,
    pub target_response: Action,
}

impl Exchange {
    /// Builds the exchange for a known target response.
    pub fn new(
        model_state: &ConversationState,
        model_action: &Action,
        target_response: Action,
    ) -> Result<Self, EngineError> {
        let target_state = model_state.append_action(model_action)?;
        // Validates author and turn of the response.
        target_state.append_action(&target_response)?;
        Ok(Self {
            model_state: model_state.clone(),
            model_action: model_action.clone(),
            target_state,
            target_response,
        })
    }

    /// Lets the shared `policy` answer on the target's behalf.
    pub fn simulate(
        policy: &dyn Policy,
        model_state: &ConversationState,
        model_action: &Action,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let target_state = model_state.append_action(model_action)?;
        let target_response = policy.generate(&target_state, seed)?;
        Self::new(model_state, model_action, target_response)
    }

    /// All four objects with author labels swapped.
    pub fn switched(&self) -> Exchange {
        let participants = self.model_state.participants();
        Exchange {
            model_state: self.model_state.switch_perspective(),
            model_action: switch_perspective_action(&self.model_action, participants),
            target_state: self.target_state.switch_perspective(),
            target_response: switch_perspective_action(&self.target_response, participants),
        }
    }

    /// Conversation after both messages.
    pub fn conversation(&self) -> Result<ConversationState, EngineError> {
        Ok(self.target_state.append_action(&self.target_response)?)
    }
}

/// How an exchange is turned into the reward the model is trained on.
pub trait Motivation: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(
        &self,
        exchange: &Exchange,
        policy: &dyn Policy,
        scorers: &RewardScorers,
    ) -> Result<RewardBreakdown, EngineError>;
}

/// Maximizes the target's estimated reward: the target's reply is scored
/// extrinsically in the switched target state, and the model's own message
/// is scored intrinsically as the feedback the target received. The
/// intrinsic term therefore belongs to the model's time step, not the
/// target's next one.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kindness;

impl Motivation for Kindness {
    fn name(&self) -> &'static str {
        "kind"
    }

    fn score(
        &self,
        exchange: &Exchange,
        policy: &dyn Policy,
        scorers: &RewardScorers,
    ) -> Result<RewardBreakdown, EngineError> {
        let sw = exchange.switched();
        let extrinsic = scorers.extrinsic.score(&sw.target_response, &sw.target_state)?;
        let intrinsic = scorers.intrinsic.score(&sw.model_action, &sw.model_state, policy)?;
        Ok(scorers.combine(extrinsic, intrinsic)?)
    }
}

/// Maximizes the model's own reward: its message is scored extrinsically
/// and the target's reply intrinsically, with no label swap.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selfish;

impl Motivation for Selfish {
    fn name(&self) -> &'static str {
        "selfish"
    }

    fn score(
        &self,
        exchange: &Exchange,
        policy: &dyn Policy,
        scorers: &RewardScorers,
    ) -> Result<RewardBreakdown, EngineError> {
        let extrinsic = scorers.extrinsic.score(&exchange.model_action, &exchange.model_state)?;
        let intrinsic = scorers.intrinsic.score(&exchange.target_response, &exchange.target_state, policy)?;
        Ok(scorers.combine(extrinsic, intrinsic)?)
    }
}

/// Result of estimating the target's reward for one model action.
#[derive(Debug, Clone)]
pub struct TargetRewardEstimate {
    pub reward: RewardBreakdown,
    pub target_response: Action,
    /// The exchange with labels swapped; the pairs the reward was read from.
    pub switched: Exchange,
}

/// Simulates the target's reply with the shared policy and scores the
/// exchange from the target's seat.
pub fn estimate_target_reward(
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_action: &Action,
    model_state: &ConversationState,
    seed: u64,
) -> Result<TargetRewardEstimate, EngineError> {
    let exchange = Exchange::simulate(policy, model_state, model_action, seed)?;
    let reward = Kindness.score(&exchange, policy, scorers)?;
    Ok(TargetRewardEstimate {
        reward,
        switched: exchange.switched(),
        target_response: exchange.target_response,
    })
}

/// Target reply for `state_after_action`, produced by the same policy the
/// model acts with.
pub fn simulate_target_response(
    policy: &dyn Policy,
    state_after_action: &ConversationState,
    seed: u64,
) -> Result<Action, EngineError> {
    Ok(policy.generate(state_after_action, seed)?)
}

/// Monte-Carlo estimate of an expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl ObjectiveEstimate {
    /// Welford accumulation in slice order. A constant sequence yields its
    /// value exactly, with zero standard error.
    pub fn from_samples(values: &[f64]) -> Result<Self, EngineError> {
        if values.is_empty() {
            return Err(EngineError::NoSamples);
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, x) in values.iter().enumerate() {
            let n = (i + 1) as f64;
            let delta = x - mean;
            mean += delta / n;
            m2 += delta * (x - mean);
        }
        let n = values.len();
        let stderr = if n > 1 {
            (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            stderr,
            samples: n,
        })
    }
}

/// Seed of the `sample`-th target rollout. Independent of the candidate, so
/// candidates compared under one base seed share random numbers.
pub fn rollout_seed(base: u64, sample: usize) -> u64 {
    seed::derive(base, seed::stream::OBJECTIVE, sample as u64)
}

/// Expected reward of `candidate` under `motivation`, estimated from
/// `samples` seeded target rollouts. Rollouts may run in parallel; the
/// reduction is always in sample order.
pub fn objective_estimate(
    motivation: &dyn Motivation,
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    candidate: &Action,
    samples: usize,
    seed: u64,
) -> Result<ObjectiveEstimate, EngineError> {
    if samples == 0 {
        return Err(EngineError::NoSamples);
    }
    let values = (0..samples)
        .into_par_iter()
        .map(|s| {
            let exchange = Exchange::simulate(policy, model_state, candidate, rollout_seed(seed, s))?;
            Ok(motivation.score(&exchange, policy, scorers)?.total())
        })
        .collect::<Result<Vec<f64>, EngineError>>()?;
    ObjectiveEstimate::from_samples(&values)
}

pub fn kindness_objective_estimate(
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    candidate: &Action,
    samples: usize,
    seed: u64,
) -> Result<ObjectiveEstimate, EngineError> {
    objective_estimate(&Kindness, policy, scorers, model_state, candidate, samples, seed)
}

/// The candidate with the highest estimated target reward, lowest index on
/// ties. Without explicit candidates the policy's own support is used.
pub fn select_kind_action(
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    candidates: Option<&[Action]>,
    samples: usize,
    seed: u64,
) -> Result<(usize, Action, ObjectiveEstimate), EngineError> {
    let owned;
    let candidates = match candidates {
        Some(c) => c,
        None => {
            owned = policy
                .candidates(model_state)
                .ok_or(EngineError::NotEnumerable(policy.kind()))?;
            &owned
        }
    };
    let mut best: Option<(usize, ObjectiveEstimate)> = None;
    for (i, candidate) in candidates.iter().enumerate() {
        let est = kindness_objective_estimate(policy, scorers, model_state, candidate, samples, seed)?;
        if best.is_none_or(|(_, b)| est.mean > b.mean) {
            best = Some((i, est));
        }
    }
    let (i, est) = best.ok_or(EngineError::EmptyCandidates)?;
    Ok((i, candidates[i].clone(), est))
}

/// Exact expected reward of `candidate`, enumerating every target reply.
pub fn brute_force(
    motivation: &dyn Motivation,
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    candidate: &Action,
) -> Result<f64, EngineError> {
    let target_state = model_state.append_action(candidate)?;
    let replies = policy
        .candidates(&target_state)
        .ok_or(EngineError::NotEnumerable(policy.kind()))?;
    let mut total = 0.0;
    for reply in replies {
        let p = policy.log_prob(&target_state, &reply)?.exp();
        if p == 0.0 {
            continue;
        }
        let exchange = Exchange::new(model_state, candidate, reply)?;
        total += p * motivation.score(&exchange, policy, scorers)?.total();
    }
    Ok(total)
}

pub fn brute_force_objective(
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    candidate: &Action,
) -> Result<f64, EngineError> {
    brute_force(&Kindness, policy, scorers, model_state, candidate)
}

/// Expected reward of the policy's own behaviour in `model_state`: each
/// sample draws the model's action and then the target's reply.
pub fn policy_objective_estimate(
    motivation: &dyn Motivation,
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
    samples: usize,
    seed: u64,
) -> Result<ObjectiveEstimate, EngineError> {
    if samples == 0 {
        return Err(EngineError::NoSamples);
    }
    let values = (0..samples)
        .into_par_iter()
        .map(|s| {
            let action = policy.generate(model_state, seed::derive(seed, seed::stream::MODEL_ACTION, s as u64))?;
            let exchange = Exchange::simulate(policy, model_state, &action, rollout_seed(seed, s))?;
            Ok(motivation.score(&exchange, policy, scorers)?.total())
        })
        .collect::<Result<Vec<f64>, EngineError>>()?;
    ObjectiveEstimate::from_samples(&values)
}

/// Exact expected objective of the policy itself in `model_state`: the
/// candidate objective averaged over the policy's own action distribution.
pub fn expected_policy_objective(
    motivation: &dyn Motivation,
    policy: &dyn Policy,
    scorers: &RewardScorers,
    model_state: &ConversationState,
) -> Result<f64, EngineError> {
    let actions = policy
        .candidates(model_state)
        .ok_or(EngineError::NotEnumerable(policy.kind()))?;
    let mut total = 0.0;
    for action in actions {
        let p = policy.log_prob(model_state, &action)?.exp();
        if p == 0.0 {
            continue;
        }
        total += p * brute_force(motivation, policy, scorers, model_state, &action)?;
    }
    Ok(total)
}
