//! Strict JSON run configuration. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use kindling::engine::{TrainingConfig, UpdateOn};
use kindling::registry::{self, BuildContext};
use kindling::remote::ApiKey;
use kindling::{Motivation, Policy, RewardScorers};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::HarnessError;

/// Policy choice: `kind` picks the registered implementation, every other
/// key is handed to it as a parameter.
#[derive(Debug, Clone, Deserialize)]
pub struct PolicyConfig {
    pub kind: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

fn default_extrinsic() -> String {
    "lexicon".into()
}
fn default_irf() -> String {
    "surprisal".into()
}
fn default_intrinsic_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// `lexicon` or `remote`.
    #[serde(default = "default_extrinsic")]
    pub extrinsic: String,
    /// Absent means an empty lexicon (every message scores 0).
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    /// Parameters of the remote scorer: `{"endpoint": {..}, "rubric": {..}}`.
    #[serde(default)]
    pub remote: Option<Value>,
    /// `surprisal`, `null` or `table`.
    #[serde(default = "default_irf")]
    pub irf: String,
    #[serde(default)]
    pub irf_table_path: Option<PathBuf>,
    #[serde(default = "default_intrinsic_weight")]
    pub intrinsic_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            extrinsic: default_extrinsic(),
            lexicon_path: None,
            remote: None,
            irf: default_irf(),
            irf_table_path: None,
            intrinsic_weight: default_intrinsic_weight(),
        }
    }
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_decay() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default)]
    pub update_on: UpdateOn,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            baseline: true,
            baseline_decay: default_decay(),
            update_on: UpdateOn::Own,
        }
    }
}

fn default_samples() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Monte-Carlo rollouts per estimate.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Candidate replies for the kind-action choice; defaults to the
    /// policy's own templates.
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            candidates: None,
        }
    }
}

fn default_motivation() -> String {
    "kind".into()
}
fn default_horizon() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub policy: PolicyConfig,
    /// `kind` or `selfish`; what `train` optimises.
    #[serde(default = "default_motivation")]
    pub motivation: String,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub dataset_path: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A parsed config with its paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub base_dir: PathBuf,
    pub source: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self, HarnessError> {
        let mut run: RunConfig = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", source.display())))?;
        let parent = source.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base_dir = std::fs::canonicalize(parent)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", parent.display())))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

        run.dataset_path = resolve(&run.dataset_path);
        run.output_dir = resolve(&run.output_dir);
        run.reward.lexicon_path = run.reward.lexicon_path.as_deref().map(resolve);
        run.reward.irf_table_path = run.reward.irf_table_path.as_deref().map(resolve);
        for path in [Some(&run.dataset_path), run.reward.lexicon_path.as_ref(), run.reward.irf_table_path.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(HarnessError::Config(format!("path does not exist: {}", path.display())));
            }
        }
        if !registry::motivation_registry().contains(&run.motivation) {
            return Err(HarnessError::Config(format!("unknown motivation `{}`", run.motivation)));
        }
        if run.horizon == 0 {
            return Err(HarnessError::Config("horizon must be >= 1".into()));
        }
        if run.objective.samples == 0 {
            return Err(HarnessError::Config("objective.samples must be >= 1".into()));
        }
        if !run.reward.intrinsic_weight.is_finite() {
            return Err(HarnessError::Config("reward.intrinsic_weight must be finite".into()));
        }
        Ok(Self {
            run,
            base_dir,
            source: source.to_path_buf(),
        })
    }

    pub fn build_context(&self, api_key: &ApiKey) -> BuildContext {
        BuildContext {
            base_dir: self.base_dir.clone(),
            api_key: api_key.clone(),
        }
    }

    pub fn build_policy(&self, api_key: &ApiKey) -> Result<Box<dyn Policy>, HarnessError> {
        let params = Value::Object(self.run.policy.params.clone());
        registry::policy_registry()
            .build(&self.run.policy.kind, &params, &self.build_context(api_key))
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn build_scorers(&self, api_key: &ApiKey) -> Result<RewardScorers, HarnessError> {
        let ctx = self.build_context(api_key);
        let reward = &self.run.reward;
        let path_params = |p: &Option<PathBuf>| match p {
            Some(p) => serde_json::json!({ "path": p }),
            None => Value::Null,
        };
        let extrinsic_params = match reward.extrinsic.as_str() {
            "remote" => reward
                .remote
                .clone()
                .ok_or_else(|| HarnessError::Config("reward.extrinsic = remote needs reward.remote".into()))?,
            _ => path_params(&reward.lexicon_path),
        };
        let intrinsic_params = match reward.irf.as_str() {
            "table" => path_params(&reward.irf_table_path),
            _ => Value::Null,
        };
        let extrinsic = registry::extrinsic_registry()
            .build(&reward.extrinsic, &extrinsic_params, &ctx)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let intrinsic = registry::intrinsic_registry()
            .build(&reward.irf, &intrinsic_params, &ctx)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(RewardScorers::new(extrinsic, intrinsic).with_intrinsic_weight(reward.intrinsic_weight))
    }

    pub fn build_motivation(&self, selfish: bool) -> Result<Box<dyn Motivation>, HarnessError> {
        let name = if selfish { "selfish" } else { self.run.motivation.as_str() };
        registry::motivation_registry()
            .build(name, &Value::Null, &BuildContext::default())
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.run.training;
        TrainingConfig {
            seed: self.run.seed,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            horizon: self.run.horizon,
            use_baseline: t.baseline,
            baseline_decay: t.baseline_decay,
            update_on: t.update_on,
            objective_samples: self.run.objective.samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "prompts.jsonl", "{\"conv_id\":\"a\",\"messages\":[{\"author\":\"u\",\"content\":\"hi\"}]}\n");
        dir
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = setup();
        let cfg = write(dir.path(), "c.json", r#"{"policy": {"kind": "echo"}, "dataset_path": "prompts.jsonl"}"#);
        let loaded = LoadedConfig::load(&cfg).unwrap();
        assert_eq!(loaded.run.seed, 0);
        assert_eq!(loaded.run.horizon, 1);
        assert_eq!(loaded.run.reward.irf, "surprisal");
        assert_eq!(loaded.run.training.learning_rate, 0.1);
        assert_eq!(loaded.run.training.baseline_decay, 0.9);
        assert_eq!(loaded.run.output_dir, dir.path().join("output"));
        assert_eq!(loaded.build_policy(&ApiKey::default()).unwrap().kind(), "echo");
    }

    #[test]
    fn unknown_keys_fail() {
        let dir = setup();
        for text in [
            r#"{"policy": {"kind": "echo"}, "dataset_path": "prompts.jsonl", "sed": 1}"#,
            r#"{"policy": {"kind": "echo"}, "dataset_path": "prompts.jsonl", "training": {"learnin_rate": 1}}"#,
            r#"{"policy": {"kind": "echo"}, "dataset_path": "prompts.jsonl", "reward": {"irf": "null", "x": 0}}"#,
        ] {
            let cfg = write(dir.path(), "c.json", text);
            assert!(matches!(LoadedConfig::load(&cfg), Err(HarnessError::Config(_))), "{text}");
        }
        // Unknown policy parameters are caught by the policy factory.
        let cfg = write(dir.path(), "c.json", r#"{"policy": {"kind": "echo", "volume": 11}, "dataset_path": "prompts.jsonl"}"#);
        let loaded = LoadedConfig::load(&cfg).unwrap();
        assert!(loaded.build_policy(&ApiKey::default()).is_err());
    }

    #[test]
    fn missing_paths_are_named() {
        let dir = setup();
        let cfg = write(dir.path(), "c.json", r#"{"policy": {"kind": "echo"}, "dataset_path": "nope.jsonl"}"#);
        match LoadedConfig::load(&cfg) {
            Err(HarnessError::Config(msg)) => assert!(msg.contains("nope.jsonl"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let cfg = write(
            dir.path(),
            "c.json",
            r#"{"policy": {"kind": "echo"}, "dataset_path": "prompts.jsonl", "reward": {"lexicon_path": "lex.json"}}"#,
        );
        assert!(LoadedConfig::load(&cfg).is_err());
    }
}
