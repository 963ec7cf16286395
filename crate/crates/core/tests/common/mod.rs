#![allow(dead_code)]

use std::collections::HashMap;

use kindling::dataset::PromptDataset;
use kindling::reward::{LexiconScorer, TableIrf};
use kindling::{ConversationState, ParticipantId, Participants, RewardScorers, TemplatePolicy};

pub const GIVE: &str = "here is a gift for you";
pub const KEEP: &str = "i keep the gift";

pub fn pid(s: &str) -> ParticipantId {
    ParticipantId::new(s).unwrap()
}

/// Prompts where the target ("user") has spoken and the model is due.
pub fn gift_prompts() -> PromptDataset {
    let pair = Participants::new(pid("user"), pid("model")).unwrap();
    let prompts = ["hello friend", "what do you have today", "rough week at work", "anything for me"]
        .iter()
        .map(|text| ConversationState::from_turns(pair.clone(), [(pid("user"), *text)], pid("model")).unwrap())
        .collect();
    PromptDataset::new(prompts).unwrap()
}

/// Receiving the gift is worth 4 to whoever receives it; saying "keep" is
/// worth 4 to whoever says it.
pub fn gift_scorers() -> RewardScorers {
    let lexicon = LexiconScorer::new(HashMap::from([("keep".to_string(), 4.0)]), 0.0);
    let irf = TableIrf::new(HashMap::from([(GIVE.to_string(), 4.0)]));
    RewardScorers::new(Box::new(lexicon), Box::new(irf))
}

pub fn gift_policy() -> TemplatePolicy {
    TemplatePolicy::new(vec![GIVE.to_string(), KEEP.to_string()], 64, 1.0).unwrap()
}

/// Smallest probability of `template` over the dataset prompts.
pub fn min_prob(policy: &TemplatePolicy, dataset: &PromptDataset, template: usize) -> f64 {
    dataset
        .iter()
        .map(|s| policy.distribution(s)[template])
        .fold(f64::INFINITY, f64::min)
}
