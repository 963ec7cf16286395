use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{Action, ConversationState};
use crate::seed;

use super::{Policy, PolicyError, PolicyExample};

pub const DEFAULT_FEATURES: usize = 64;
const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "template";

/// FNV-1a, fixed so feature buckets are identical across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket of a single whitespace-separated token.
pub fn feature_bucket(token: &str, features: usize) -> usize {
    (fnv1a(token.as_bytes()) % features as u64) as usize
}

/// Softmax policy over a fixed list of response templates.
///
/// The state is reduced to one active feature: the tokens of the last
/// message written by the other participant are hashed into `F` buckets and
/// the fullest bucket (lowest index on ties) selects a row of the `F x K`
/// weight matrix. A temperature of exactly zero means greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePolicy {
    templates: Vec<String>,
    weights: Vec<Vec<f64>>,
    temperature: f64,
}

impl TemplatePolicy {
    pub fn new(templates: Vec<String>, features: usize, temperature: f64) -> Result<Self, PolicyError> {
        let k = templates.len();
        Self::from_parts(templates, vec![vec![0.0; k]; features], temperature)
    }

    pub fn from_parts(templates: Vec<String>, weights: Vec<Vec<f64>>, temperature: f64) -> Result<Self, PolicyError> {
        if templates.is_empty() {
            return Err(PolicyError::Invalid("at least one template is required".into()));
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].contains(t) {
                return Err(PolicyError::Invalid(format!("duplicate template `{t}`")));
            }
        }
        if weights.is_empty() {
            return Err(PolicyError::Invalid("at least one feature bucket is required".into()));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != templates.len()) {
            return Err(PolicyError::Invalid(format!(
                "weight row has {} entries for {} templates",
                row.len(),
                templates.len()
            )));
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(PolicyError::Invalid("weights must be finite".into()));
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(PolicyError::Invalid(format!("temperature must be >= 0, got {temperature}")));
        }
        Ok(Self {
            templates,
            weights,
            temperature,
        })
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn with_weights(&self, weights: Vec<Vec<f64>>) -> Result<Self, PolicyError> {
        Self::from_parts(self.templates.clone(), weights, self.temperature)
    }

    pub fn template_index(&self, content: &str) -> Result<usize, PolicyError> {
        self.templates
            .iter()
            .position(|t| t == content)
            .ok_or_else(|| PolicyError::UnknownTemplate(content.to_owned()))
    }

    /// Active feature bucket for the participant due to speak.
    pub fn active_feature(&self, state: &ConversationState) -> usize {
        let features = self.num_features();
        let mut counts = vec![0usize; features];
        // The viewpoint is always a participant, so rendering cannot fail.
        if let Ok(transcript) = state.render_for_speaker(state.next_speaker()) {
            if let Some(msg) = transcript.last_other() {
                for token in msg.content.split_whitespace() {
                    counts[feature_bucket(token, features)] += 1;
                }
            }
        }
        argmax_usize(&counts)
    }

    fn row_probabilities(&self, row: &[f64]) -> Vec<f64> {
        if self.is_greedy() {
            let best = argmax_f64(row);
            return (0..row.len()).map(|k| if k == best { 1.0 } else { 0.0 }).collect();
        }
        let logits: Vec<f64> = row.iter().map(|w| w / self.temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    fn row_log_probabilities(&self, row: &[f64]) -> Vec<f64> {
        if self.is_greedy() {
            return self.row_probabilities(row).into_iter().map(f64::ln).collect();
        }
        let logits: Vec<f64> = row.iter().map(|w| w / self.temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - max - log_z).collect()
    }

    /// Distribution over templates in `state`, in template order.
    pub fn distribution(&self, state: &ConversationState) -> Vec<f64> {
        self.row_probabilities(&self.weights[self.active_feature(state)])
    }

    /// Sum over the batch of `advantage * d log p(action | state) / d weights`.
    pub fn gradient(&self, batch: &[PolicyExample]) -> Result<Vec<Vec<f64>>, PolicyError> {
        if self.is_greedy() {
            return Err(PolicyError::Invalid("a greedy (temperature 0) policy has no gradient".into()));
        }
        let mut grad = vec![vec![0.0; self.templates.len()]; self.num_features()];
        for ex in batch {
            let chosen = self.template_index(ex.action.content())?;
            if ex.advantage == 0.0 {
                continue;
            }
            let f = self.active_feature(&ex.state);
            let probs = self.row_probabilities(&self.weights[f]);
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == chosen { 1.0 } else { 0.0 };
                grad[f][k] += ex.advantage * (indicator - p) / self.temperature;
            }
        }
        Ok(grad)
    }

    /// One REINFORCE ascent step on the batch; gradients are taken at the
    /// current weights for every example.
    pub fn update(&self, batch: &[PolicyExample], learning_rate: f64) -> Result<Self, PolicyError> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(PolicyError::Invalid(format!("learning rate must be > 0, got {learning_rate}")));
        }
        let grad = self.gradient(batch)?;
        let mut weights = self.weights.clone();
        for (row, grow) in weights.iter_mut().zip(&grad) {
            for (w, g) in row.iter_mut().zip(grow) {
                if *g != 0.0 {
                    *w += learning_rate * g;
                }
            }
        }
        self.with_weights(weights)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: CHECKPOINT_KIND.to_owned(),
            templates: self.templates.clone(),
            temperature: self.temperature,
            weights: self.weights.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, PolicyError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(PolicyError::Checkpoint(format!("unsupported kind `{}`", ckpt.kind)));
        }
        Self::from_parts(ckpt.templates, ckpt.weights, ckpt.temperature)
    }

    pub fn checkpoint_json(&self) -> String {
        // Plain data; serialization cannot fail.
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn parse_checkpoint(text: &str) -> Result<Self, PolicyError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.checkpoint_json() + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::parse_checkpoint(&text)
    }
}

impl Policy for TemplatePolicy {
    fn kind(&self) -> &'static str {
        "template"
    }

    fn generate(&self, state: &ConversationState, seed: u64) -> Result<Action, PolicyError> {
        let probs = self.distribution(state);
        let u: f64 = seed::rng(seed).random();
        let mut cumulative = 0.0;
        let mut pick = None;
        for (k, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                pick = Some(k);
                cumulative += p;
                if u < cumulative {
                    break;
                }
            }
        }
        // Rounding can leave the cumulative sum just below u: fall back to the
        // last template with nonzero mass.
        let k = pick.expect("softmax has at least one positive entry");
        Ok(state.action(self.templates[k].clone()))
    }

    fn log_prob(&self, state: &ConversationState, action: &Action) -> Result<f64, PolicyError> {
        let k = self.template_index(action.content())?;
        Ok(self.row_log_probabilities(&self.weights[self.active_feature(state)])[k])
    }

    fn candidates(&self, state: &ConversationState) -> Option<Vec<Action>> {
        Some(self.templates.iter().map(|t| state.action(t.clone())).collect())
    }

    fn as_template(&self) -> Option<&TemplatePolicy> {
        Some(self)
    }
}

/// On-disk checkpoint of a [`TemplatePolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub templates: Vec<String>,
    pub temperature: f64,
    pub weights: Vec<Vec<f64>>,
}

fn argmax_usize(values: &[usize]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::tests::{ab, pid};
    use crate::conversation::ConversationState;

    fn templates(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("t{i}")).collect()
    }

    fn state(last: &str) -> ConversationState {
        ConversationState::from_turns(ab(), [(pid("A"), last)], pid("A")).unwrap()
    }

    fn example(policy: &TemplatePolicy, s: &ConversationState, k: usize, advantage: f64) -> PolicyExample {
        PolicyExample {
            state: s.clone(),
            action: s.action(policy.templates()[k].clone()),
            advantage,
        }
    }

    #[test]
    fn zero_weights_uniform_log_prob() {
        let p = TemplatePolicy::new(templates(4), DEFAULT_FEATURES, 1.0).unwrap();
        let s = state("hello there");
        let lp = p.log_prob(&s, &s.action("t2")).unwrap();
        assert!((lp - (-1.386_294_361_119_890_6)).abs() < 1e-12);
    }

    #[test]
    fn log_prob_of_two_logits() {
        let s = state("gift");
        let f = feature_bucket("gift", DEFAULT_FEATURES);
        let mut weights = vec![vec![0.0, 0.0]; DEFAULT_FEATURES];
        weights[f] = vec![1.0, 0.0];
        let p = TemplatePolicy::from_parts(templates(2), weights, 1.0).unwrap();
        assert_eq!(p.active_feature(&s), f);
        // ln(e / (e + 1))
        let lp = p.log_prob(&s, &s.action("t0")).unwrap();
        assert!((lp - (-0.313_261_687_518_222_8)).abs() < 1e-12, "{lp}");
    }

    #[test]
    fn unknown_template_rejected() {
        let p = TemplatePolicy::new(templates(2), 8, 1.0).unwrap();
        let s = state("x");
        assert!(matches!(
            p.log_prob(&s, &s.action("not-a-template")),
            Err(PolicyError::UnknownTemplate(_))
        ));
        assert!(matches!(
            p.update(&[PolicyExample { state: s.clone(), action: s.action("nope"), advantage: 1.0 }], 0.1),
            Err(PolicyError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn greedy_picks_lowest_argmax() {
        let weights = vec![vec![0.5, 2.0, 2.0, -1.0]];
        let p = TemplatePolicy::from_parts(templates(4), weights, 0.0).unwrap();
        let s = state("anything");
        for seed in 0..20 {
            assert_eq!(p.generate(&s, seed).unwrap().content(), "t1");
        }
        assert_eq!(p.distribution(&s), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_uses_last_other_message() {
        let p = TemplatePolicy::new(templates(2), DEFAULT_FEATURES, 1.0).unwrap();
        let s = ConversationState::from_turns(ab(), [(pid("A"), "gift"), (pid("B"), "zzz")], pid("A")).unwrap();
        // Next speaker is A, so the last OTHER message is B's.
        assert_eq!(p.active_feature(&s), feature_bucket("zzz", DEFAULT_FEATURES));
        let empty = ConversationState::empty(ab(), pid("A")).unwrap();
        assert_eq!(p.active_feature(&empty), 0);
    }

    #[test]
    fn zero_advantage_leaves_weights_bit_identical() {
        let weights: Vec<Vec<f64>> = (0..4).map(|f| vec![f as f64 * 0.3, -0.0, 1.25]).collect();
        let p = TemplatePolicy::from_parts(templates(3), weights, 1.0).unwrap();
        let s = state("a b c");
        let batch = vec![example(&p, &s, 0, 0.0), example(&p, &s, 2, 0.0)];
        let q = p.update(&batch, 0.1).unwrap();
        for (a, b) in p.weights().iter().flatten().zip(q.weights().iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn positive_advantage_raises_log_prob() {
        let p = TemplatePolicy::new(templates(3), 16, 1.0).unwrap();
        let s = state("hi there");
        let a = s.action("t1");
        let before = p.log_prob(&s, &a).unwrap();
        let q = p.update(&[example(&p, &s, 1, 1.5)], 0.1).unwrap();
        assert!(q.log_prob(&s, &a).unwrap() > before);
        assert_eq!(p.log_prob(&s, &a).unwrap(), before);
    }

    #[test]
    fn opposite_examples_move_probabilities_apart() {
        let p = TemplatePolicy::new(templates(2), 16, 1.0).unwrap();
        let s = state("hi there");
        let q = p.update(&[example(&p, &s, 0, 1.0), example(&p, &s, 1, -1.0)], 0.1).unwrap();
        let before = p.distribution(&s);
        let after = q.distribution(&s);
        assert!(after[0] > before[0]);
        assert!(after[1] < before[1]);
        assert!((after.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let p = TemplatePolicy::from_parts(templates(2), vec![vec![0.1, -0.2]; 3], 0.7).unwrap();
        let back = TemplatePolicy::parse_checkpoint(&p.checkpoint_json()).unwrap();
        assert_eq!(back, p);
        assert!(p.checkpoint_json().starts_with("{\"version\":1,\"kind\":\"template\",\"templates\""));

        let v2 = p.checkpoint_json().replace("\"version\":1", "\"version\":2");
        assert!(matches!(TemplatePolicy::parse_checkpoint(&v2), Err(PolicyError::Checkpoint(_))));
        let kind = p.checkpoint_json().replace("\"template\"", "\"neural\"");
        assert!(matches!(TemplatePolicy::parse_checkpoint(&kind), Err(PolicyError::Checkpoint(_))));
        assert!(TemplatePolicy::parse_checkpoint("{not json").is_err());
    }

    #[test]
    fn construction_validates_shapes() {
        assert!(TemplatePolicy::new(vec![], 4, 1.0).is_err());
        assert!(TemplatePolicy::new(vec!["a".into(), "a".into()], 4, 1.0).is_err());
        assert!(TemplatePolicy::new(templates(2), 4, -1.0).is_err());
        assert!(TemplatePolicy::from_parts(templates(2), vec![vec![0.0]], 1.0).is_err());
    }
}
