//! Name-keyed factories for the interchangeable strategies: policies,
//! extrinsic scorers, intrinsic reward functions and training motivations.
//! Each factory receives its own JSON parameter object and rejects unknown
//! keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::engine::{Kindness, Motivation, Selfish};
use crate::policy::{EchoPolicy, Policy, TemplatePolicy, DEFAULT_FEATURES};
use crate::remote::{ApiKey, RemoteClient, RemoteEndpointConfig, RemotePolicy, RemoteScorer, RemoteSettings, ScoreRubric};
use crate::reward::{ExtrinsicScorer, IntrinsicScorer, LexiconScorer, NullIrf, SurprisalIrf, TableIrf};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("{kind} `{name}`: {reason}")]
    Build {
        kind: &'static str,
        name: String,
        reason: String,
    },
}

/// What factories may need besides their parameters.
#[derive(Debug, Clone, Default)]
pub struct BuildContext {
    /// Relative paths in parameters resolve against this directory.
    pub base_dir: PathBuf,
    pub api_key: ApiKey,
}

impl BuildContext {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

type Factory<T> = Box<dyn Fn(&Value, &BuildContext) -> Result<Box<T>, String> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Value, &BuildContext) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, params: &Value, ctx: &BuildContext) -> Result<Box<T>, RegistryError> {
        let factory = self.factories.get(name).ok_or_else(|| RegistryError::UnknownName {
            kind: self.kind,
            name: name.to_owned(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })?;
        factory(params, ctx).map_err(|reason| RegistryError::Build {
            kind: self.kind,
            name: name.to_owned(),
            reason,
        })
    }
}

/// Parameters as `T`; `null` counts as an empty object.
fn params<T: DeserializeOwned>(value: &Value) -> Result<T, String> {
    let value = if value.is_null() { Value::Object(Default::default()) } else { value.clone() };
    serde_json::from_value(value).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn default_temperature() -> f64 {
    1.0
}
fn default_features() -> usize {
    DEFAULT_FEATURES
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateParams {
    #[serde(default)]
    templates: Vec<String>,
    #[serde(default = "default_temperature")]
    temperature: f64,
    #[serde(default = "default_features")]
    features: usize,
    /// Initial weights; when set, `templates` may be omitted.
    #[serde(default)]
    checkpoint: Option<PathBuf>,
}

pub fn build_template(value: &Value, ctx: &BuildContext) -> Result<TemplatePolicy, String> {
    let p: TemplateParams = params(value)?;
    match p.checkpoint {
        Some(path) => {
            let policy = TemplatePolicy::load(&ctx.resolve(&path)).map_err(|e| e.to_string())?;
            if !p.templates.is_empty() && p.templates != policy.templates() {
                return Err("`templates` disagree with the checkpoint".into());
            }
            Ok(policy)
        }
        None => TemplatePolicy::new(p.templates, p.features, p.temperature).map_err(|e| e.to_string()),
    }
}

fn remote_client(settings: &RemoteSettings, ctx: &BuildContext) -> Result<Arc<RemoteClient>, String> {
    let cfg = RemoteEndpointConfig::from_settings(settings, ctx.api_key.clone()).map_err(|e| e.to_string())?;
    Ok(Arc::new(RemoteClient::new(cfg).map_err(|e| e.to_string())?))
}

pub fn policy_registry() -> Registry<dyn Policy> {
    let mut r: Registry<dyn Policy> = Registry::new("policy");
    r.register("template", |v, ctx| Ok(Box::new(build_template(v, ctx)?)));
    r.register("echo", |v, _| {
        params::<NoParams>(v)?;
        Ok(Box::new(EchoPolicy))
    });
    r.register("remote", |v, ctx| {
        let settings: RemoteSettings = params(v)?;
        Ok(Box::new(RemotePolicy::new(remote_client(&settings, ctx)?)))
    });
    r
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathParams {
    #[serde(default)]
    path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoteScorerParams {
    endpoint: RemoteSettings,
    #[serde(default)]
    rubric: ScoreRubric,
}

pub fn extrinsic_registry() -> Registry<dyn ExtrinsicScorer> {
    let mut r: Registry<dyn ExtrinsicScorer> = Registry::new("extrinsic scorer");
    r.register("lexicon", |v, ctx| {
        let p: PathParams = params(v)?;
        Ok(Box::new(match p.path {
            Some(path) => LexiconScorer::load(&ctx.resolve(&path)).map_err(|e| e.to_string())?,
            None => LexiconScorer::empty(),
        }))
    });
    r.register("remote", |v, ctx| {
        let p: RemoteScorerParams = params(v)?;
        Ok(Box::new(RemoteScorer::new(remote_client(&p.endpoint, ctx)?, p.rubric)))
    });
    r
}

pub fn intrinsic_registry() -> Registry<dyn IntrinsicScorer> {
    let mut r: Registry<dyn IntrinsicScorer> = Registry::new("intrinsic reward");
    r.register("surprisal", |v, _| {
        params::<NoParams>(v)?;
        Ok(Box::new(SurprisalIrf))
    });
    r.register("null", |v, _| {
        params::<NoParams>(v)?;
        Ok(Box::new(NullIrf))
    });
    r.register("table", |v, ctx| {
        let p: PathParams = params(v)?;
        let path = p.path.ok_or("a table IRF needs `path`")?;
        Ok(Box::new(TableIrf::load(&ctx.resolve(&path)).map_err(|e| e.to_string())?))
    });
    r
}

pub fn motivation_registry() -> Registry<dyn Motivation> {
    let mut r: Registry<dyn Motivation> = Registry::new("motivation");
    r.register("kind", |v, _| {
        params::<NoParams>(v)?;
        Ok(Box::new(Kindness))
    });
    r.register("selfish", |v, _| {
        params::<NoParams>(v)?;
        Ok(Box::new(Selfish))
    });
    r
}
