mod common;

use common::*;
use kindling::engine::{expected_policy_objective, train, train_naive_kindness, train_selfish_baseline, TrainingConfig, UpdateOn};
use kindling::Kindness;

fn config() -> TrainingConfig {
    TrainingConfig {
        seed: 7,
        learning_rate: 0.1,
        epochs: 50,
        ..Default::default()
    }
}

#[test]
fn kindness_learns_to_give() {
    let data = gift_prompts();
    let run = train_naive_kindness(&gift_policy(), &data, &gift_scorers(), &config()).unwrap();
    assert_eq!(run.records.len(), 200);
    let p = min_prob(&run.policy, &data, 0);
    assert!(p > 0.9, "P(GIVE) = {p}");
}

#[test]
fn selfish_learns_to_keep() {
    let data = gift_prompts();
    let run = train_selfish_baseline(&gift_policy(), &data, &gift_scorers(), &config()).unwrap();
    let p = min_prob(&run.policy, &data, 1);
    assert!(p > 0.9, "P(KEEP) = {p}");
}

#[test]
fn training_is_deterministic() {
    let data = gift_prompts();
    let a = train_naive_kindness(&gift_policy(), &data, &gift_scorers(), &config()).unwrap();
    let b = train_naive_kindness(&gift_policy(), &data, &gift_scorers(), &config()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.policy.checkpoint_json(), b.policy.checkpoint_json());
}

#[test]
fn expected_objective_improves_during_training() {
    let data = gift_prompts();
    let scorers = gift_scorers();
    let dataset_objective = |policy: &kindling::TemplatePolicy| {
        data.iter()
            .map(|s| expected_policy_objective(&Kindness, policy, &scorers, s).unwrap())
            .sum::<f64>()
            / data.len() as f64
    };
    let initial = dataset_objective(&gift_policy());
    let mut checkpoints = vec![initial];
    train(&gift_policy(), &data, &scorers, &Kindness, &config(), &mut |policy, record| {
        if (record.step + 1) % 50 == 0 {
            checkpoints.push(dataset_objective(policy));
        }
    })
    .unwrap();
    assert_eq!(checkpoints.len(), 5);
    for pair in checkpoints.windows(2) {
        assert!(pair[1] >= pair[0] - 0.05, "{checkpoints:?}");
    }
    let final_value = *checkpoints.last().unwrap();
    assert!(final_value - initial >= 1.0, "{checkpoints:?}");
}

#[test]
fn switched_update_variant_runs() {
    let data = gift_prompts();
    let cfg = TrainingConfig { update_on: UpdateOn::Switched, ..config() };
    let run = train_naive_kindness(&gift_policy(), &data, &gift_scorers(), &cfg).unwrap();
    assert_eq!(run.records.len(), 200);
    // The paper-literal variant updates the rows seen from the target's
    // seat, so the prompts' own rows may stay untouched.
    assert_ne!(run.policy, gift_policy());
}

#[test]
fn prompt_rows_are_disjoint_from_reply_rows() {
    // Otherwise training the prompts would also retrain the target's replies.
    let data = gift_prompts();
    let p = gift_policy();
    for s in data.iter() {
        let f = p.active_feature(s);
        for reply_to in [GIVE, KEEP] {
            assert_ne!(f, p.active_feature(&s.append_action(&s.action(reply_to)).unwrap()));
        }
    }
}
