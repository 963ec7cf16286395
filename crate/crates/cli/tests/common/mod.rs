#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kindling::remote::ApiKey;
use serde_json::{json, Value};

pub const SENTINEL: &str = "sk-sentinel-3f9a";

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn bundled(name: &str) -> String {
    configs_dir().join(name).display().to_string()
}

pub fn data(name: &str) -> String {
    configs_dir().join("data").join(name).display().to_string()
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the harness in-process with the given stdin and API key.
pub fn invoke_with(args: &[&str], stdin: &str, api_key: &str) -> Outcome {
    let mut argv = vec!["kindling"];
    argv.extend_from_slice(args);
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = kindling_cli::run(argv, ApiKey::new(api_key), &mut input, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn invoke(args: &[&str]) -> Outcome {
    invoke_with(args, "", "")
}

pub fn write_config(dir: &Path, name: &str, config: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path.display().to_string()
}

pub fn remote_settings(url: &str) -> Value {
    json!({
        "base_url": url,
        "model_name": "test-model",
        "timeout_secs": 2.0,
        "max_retries": 0,
        "temperature": 0.5,
        "system_prompt": "You are a helpful assistant.",
        "backoff_base_secs": 0.01
    })
}

/// Remote policy and remote scorer on one endpoint; no intrinsic reward,
/// since a remote policy has no log-probabilities.
pub fn remote_config(dir: &Path, url: &str) -> Value {
    let mut policy = remote_settings(url);
    policy["kind"] = json!("remote");
    json!({
        "seed": 3,
        "policy": policy,
        "reward": {
            "extrinsic": "remote",
            "remote": {"endpoint": remote_settings(url)},
            "irf": "null"
        },
        "objective": {"samples": 2, "candidates": ["sure", "no"]},
        "dataset_path": data("chat_prompts.jsonl"),
        "output_dir": dir.join("out").display().to_string()
    })
}

/// Every file below `dir`, recursively.
pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else { return out };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out
}
