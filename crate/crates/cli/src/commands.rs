use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use kindling::conversation::{write_transcript, ParticipantId, Participants};
use kindling::dataset::{ingest_prompts, IngestError, Ingested};
use kindling::engine::{
    brute_force_objective, estimate_target_reward, expected_policy_objective, kindness_objective_estimate,
    policy_objective_estimate, select_kind_action, train, write_metrics, EngineError, Kindness, Motivation,
};
use kindling::remote::ApiKey;
use kindling::seed::{self, stream};
use kindling::{Action, ConversationState, Policy, PolicyError, TemplatePolicy};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::HarnessError;

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Engine failures caused by the setup rather than by the run itself are
/// reported as config errors.
fn engine_error(e: EngineError) -> HarnessError {
    match e {
        EngineError::NotEnumerable(_)
        | EngineError::NotTrainable(_)
        | EngineError::InvalidConfig(_)
        | EngineError::EmptyDataset
        | EngineError::EmptyCandidates
        | EngineError::NoSamples => HarnessError::Config(e.to_string()),
        other => HarnessError::Runtime(other.to_string()),
    }
}

fn load_dataset(cfg: &LoadedConfig, lenient: bool) -> Result<Ingested, HarnessError> {
    ingest_prompts(&cfg.run.dataset_path, lenient).map_err(|e| match e {
        IngestError::Io { .. } => HarnessError::Config(e.to_string()),
        other => HarnessError::Config(format!("{}: {other}", cfg.run.dataset_path.display())),
    })
}

fn load_checkpoint(path: &Path) -> Result<TemplatePolicy, HarnessError> {
    TemplatePolicy::load(path).map_err(|e| HarnessError::Config(format!("bad checkpoint: {e}")))
}

fn policy_for(cfg: &LoadedConfig, api_key: &ApiKey, checkpoint: Option<&Path>) -> Result<Box<dyn Policy>, HarnessError> {
    match checkpoint {
        Some(path) => Ok(Box::new(load_checkpoint(path)?)),
        None => cfg.build_policy(api_key),
    }
}

fn create_output_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| runtime(format!("cannot write {}: {e}", path.display()))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub motivation: &'static str,
    /// Per template: mean and minimum probability over the dataset's prompts.
    pub template_probabilities: Vec<(String, f64, f64)>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub output_dir: PathBuf,
}

/// Mean over prompts of the policy's exact expected objective.
fn dataset_objective(
    motivation: &dyn Motivation,
    policy: &TemplatePolicy,
    cfg: &LoadedConfig,
    api_key: &ApiKey,
    prompts: &[ConversationState],
) -> Result<f64, HarnessError> {
    let scorers = cfg.build_scorers(api_key)?;
    let values = prompts
        .iter()
        .map(|p| expected_policy_objective(motivation, policy, &scorers, p))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(engine_error)?;
    Ok(mean(&values))
}

/// Trains with the configured motivation (selfish when `baseline` is set) and
/// writes `initial_checkpoint.json`, `checkpoint.json`, `metrics.jsonl` and
/// `transcripts.jsonl` to the output directory.
pub fn cmd_train(
    cfg: &LoadedConfig,
    api_key: &ApiKey,
    baseline: bool,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> Result<TrainSummary, HarnessError> {
    let started = Instant::now();
    let policy = policy_for(cfg, api_key, checkpoint)?;
    let initial = policy
        .as_template()
        .cloned()
        .ok_or_else(|| engine_error(EngineError::NotTrainable(policy.kind())))?;
    let ingested = load_dataset(cfg, false)?;
    let scorers = cfg.build_scorers(api_key)?;
    let motivation = cfg.build_motivation(baseline)?;
    let motivation = motivation.as_ref();
    let training = cfg.training_config();

    let run = train(&initial, &ingested.dataset, &scorers, motivation, &training, &mut |_, _| {}).map_err(engine_error)?;

    let dir = &cfg.run.output_dir;
    create_output_dir(dir)?;
    let save = |policy: &TemplatePolicy, name: &str| {
        let path = dir.join(name);
        policy.save(&path).map_err(io_error(&path))
    };
    save(&initial, "initial_checkpoint.json")?;
    save(&run.policy, "checkpoint.json")?;

    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = create_file(&metrics_path)?;
    write_metrics(&mut metrics, &run.records)
        .and_then(|_| metrics.flush())
        .map_err(io_error(&metrics_path))?;

    let transcripts_path = dir.join("transcripts.jsonl");
    let mut transcripts = create_file(&transcripts_path)?;
    let horizon = training.horizon;
    for record in run.records.iter().filter(|r| (r.step + 1) % horizon == 0) {
        let episode = record.step / horizon;
        let conv_id = format!("{}:{episode}", ingested.conv_ids[record.prompt_index]);
        write_transcript(&mut transcripts, &conv_id, record.conversation.messages()).map_err(io_error(&transcripts_path))?;
    }
    transcripts.flush().map_err(io_error(&transcripts_path))?;

    let prompts: Vec<ConversationState> = ingested.dataset.iter().cloned().collect();
    let template_probabilities = initial
        .templates()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let probs: Vec<f64> = prompts.iter().map(|p| run.policy.distribution(p)[k]).collect();
            (t.clone(), mean(&probs), probs.iter().copied().fold(f64::INFINITY, f64::min))
        })
        .collect();
    let summary = TrainSummary {
        steps: run.records.len(),
        motivation: motivation.name(),
        template_probabilities,
        initial_objective: dataset_objective(motivation, &initial, cfg, api_key, &prompts)?,
        final_objective: dataset_objective(motivation, &run.policy, cfg, api_key, &prompts)?,
        output_dir: dir.clone(),
    };

    let mut print = || -> std::io::Result<()> {
        writeln!(out, "trained {} steps ({} objective)", summary.steps, summary.motivation)?;
        for (t, avg, min) in &summary.template_probabilities {
            writeln!(out, "  P({t:?}) mean {avg:.4} min {min:.4}")?;
        }
        writeln!(
            out,
            "mean objective: {:.6} (initial {:.6})",
            summary.final_objective, summary.initial_objective
        )?;
        writeln!(out, "wall time: {:.3}s", started.elapsed().as_secs_f64())?;
        writeln!(out, "outputs in {}", summary.output_dir.display())
    };
    print().map_err(runtime)?;
    Ok(summary)
}

/// One line of `evaluation.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationLine {
    pub conv_id: String,
    pub prompt_index: usize,
    pub objective_mean: f64,
    pub objective_stderr: f64,
    pub samples: usize,
    /// Exact value, present when the policy can be enumerated.
    pub objective_exact: Option<f64>,
    pub kind_action: Option<String>,
    pub kind_action_index: Option<usize>,
    pub kind_action_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub lines: Vec<EvaluationLine>,
    pub mean_objective: f64,
}

fn candidate_actions(cfg: &LoadedConfig, state: &ConversationState) -> Option<Vec<Action>> {
    cfg.run
        .objective
        .candidates
        .as_ref()
        .map(|c| c.iter().map(|t| state.action(t.clone())).collect())
}

/// Kindness objective of the policy on every prompt, plus the kind action
/// choice; writes `evaluation.jsonl`.
pub fn cmd_evaluate(
    cfg: &LoadedConfig,
    api_key: &ApiKey,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EvaluationSummary, HarnessError> {
    let policy = policy_for(cfg, api_key, checkpoint)?;
    let ingested = load_dataset(cfg, false)?;
    let scorers = cfg.build_scorers(api_key)?;
    let samples = cfg.run.objective.samples;

    let mut lines = Vec::with_capacity(ingested.dataset.len());
    for (i, prompt) in ingested.dataset.iter().enumerate() {
        let eval_seed = seed::derive(cfg.run.seed, stream::EVALUATE, i as u64);
        let est = policy_objective_estimate(&Kindness, policy.as_ref(), &scorers, prompt, samples, eval_seed)
            .map_err(engine_error)?;
        let exact = match policy.candidates(prompt) {
            Some(_) => Some(expected_policy_objective(&Kindness, policy.as_ref(), &scorers, prompt).map_err(engine_error)?),
            None => None,
        };
        let candidates = candidate_actions(cfg, prompt);
        let choice = if candidates.is_some() || policy.candidates(prompt).is_some() {
            Some(
                select_kind_action(policy.as_ref(), &scorers, prompt, candidates.as_deref(), samples, eval_seed)
                    .map_err(engine_error)?,
            )
        } else {
            None
        };
        lines.push(EvaluationLine {
            conv_id: ingested.conv_ids[i].clone(),
            prompt_index: i,
            objective_mean: est.mean,
            objective_stderr: est.stderr,
            samples: est.samples,
            objective_exact: exact,
            kind_action: choice.as_ref().map(|(_, a, _)| a.content().to_owned()),
            kind_action_index: choice.as_ref().map(|(k, _, _)| *k),
            kind_action_objective: choice.as_ref().map(|(_, _, e)| e.mean),
        });
    }

    let dir = &cfg.run.output_dir;
    create_output_dir(dir)?;
    let path = dir.join("evaluation.jsonl");
    let mut file = create_file(&path)?;
    for line in &lines {
        writeln!(file, "{}", serde_json::to_string(line).map_err(runtime)?).map_err(io_error(&path))?;
    }
    file.flush().map_err(io_error(&path))?;

    let mean_objective = mean(&lines.iter().map(|l| l.objective_mean).collect::<Vec<_>>());
    let mut print = || -> std::io::Result<()> {
        for l in &lines {
            write!(out, "{}: objective {:.6} ± {:.6}", l.conv_id, l.objective_mean, l.objective_stderr)?;
            if let Some(x) = l.objective_exact {
                write!(out, " (exact {x:.6})")?;
            }
            if let Some(a) = &l.kind_action {
                write!(out, " kind action {a:?}")?;
            }
            writeln!(out)?;
        }
        writeln!(out, "mean objective: {mean_objective:.6} over {} prompts", lines.len())
    };
    print().map_err(runtime)?;
    Ok(EvaluationSummary { lines, mean_objective })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub conv_id: String,
    pub candidate: String,
    pub monte_carlo: f64,
    pub stderr: f64,
    pub exact: f64,
}

impl OracleRow {
    pub fn deviation(&self) -> f64 {
        (self.monte_carlo - self.exact).abs()
    }

    pub fn agrees(&self) -> bool {
        self.deviation() <= 3.0 * self.stderr
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub max_deviation: f64,
}

/// Monte-Carlo against exact objective for every prompt and candidate.
/// Fails with a runtime error when any deviation exceeds three standard
/// errors.
pub fn cmd_oracle(
    cfg: &LoadedConfig,
    api_key: &ApiKey,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> Result<OracleReport, HarnessError> {
    let policy = policy_for(cfg, api_key, checkpoint)?;
    let ingested = load_dataset(cfg, false)?;
    let scorers = cfg.build_scorers(api_key)?;
    let samples = cfg.run.objective.samples;

    let mut rows = Vec::new();
    for (i, prompt) in ingested.dataset.iter().enumerate() {
        let own = policy
            .candidates(prompt)
            .ok_or_else(|| engine_error(EngineError::NotEnumerable(policy.kind())))?;
        let candidates = candidate_actions(cfg, prompt).unwrap_or(own);
        let oracle_seed = seed::derive(cfg.run.seed, stream::EVALUATE, i as u64);
        for candidate in &candidates {
            let est = kindness_objective_estimate(policy.as_ref(), &scorers, prompt, candidate, samples, oracle_seed)
                .map_err(engine_error)?;
            let exact = brute_force_objective(policy.as_ref(), &scorers, prompt, candidate).map_err(engine_error)?;
            rows.push(OracleRow {
                conv_id: ingested.conv_ids[i].clone(),
                candidate: candidate.content().to_owned(),
                monte_carlo: est.mean,
                stderr: est.stderr,
                exact,
            });
        }
    }
    let max_deviation = rows.iter().map(OracleRow::deviation).fold(0.0, f64::max);
    let mut print = || -> std::io::Result<()> {
        for r in &rows {
            writeln!(
                out,
                "{} {:?}: monte-carlo {:.6} ± {:.6}, exact {:.6}, deviation {:.6}{}",
                r.conv_id,
                r.candidate,
                r.monte_carlo,
                r.stderr,
                r.exact,
                r.deviation(),
                if r.agrees() { "" } else { "  OUTSIDE 3 STDERR" }
            )?;
        }
        writeln!(out, "max deviation: {max_deviation:.6}")
    };
    print().map_err(runtime)?;
    if let Some(bad) = rows.iter().find(|r| !r.agrees()) {
        return Err(HarnessError::Runtime(format!(
            "monte-carlo estimate for {} {:?} is {:.6} away from the exact value",
            bad.conv_id,
            bad.candidate,
            bad.deviation()
        )));
    }
    Ok(OracleReport { rows, max_deviation })
}

#[derive(Debug, Clone, Default)]
pub struct ChatOptions {
    pub checkpoint: Option<PathBuf>,
    pub show_rewards: bool,
}

pub const CHAT_HUMAN: &str = "user";
pub const CHAT_MODEL: &str = "model";
pub const QUIT: &str = "/quit";

/// Terminal loop where the human is the target. Each non-empty input line
/// becomes the human's message and the model answers it; the transcript is
/// appended to `chat_transcript.jsonl` after every exchange.
pub fn cmd_chat(
    cfg: &LoadedConfig,
    api_key: &ApiKey,
    options: &ChatOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), HarnessError> {
    let policy = policy_for(cfg, api_key, options.checkpoint.as_deref())?;
    let scorers = if options.show_rewards {
        Some(cfg.build_scorers(api_key)?)
    } else {
        None
    };
    let dir = &cfg.run.output_dir;
    create_output_dir(dir)?;
    let path = dir.join("chat_transcript.jsonl");
    let mut transcript = create_file(&path)?;

    let human = ParticipantId::new(CHAT_HUMAN).map_err(runtime)?;
    let model = ParticipantId::new(CHAT_MODEL).map_err(runtime)?;
    let pair = Participants::new(human.clone(), model).map_err(runtime)?;
    let mut state = ConversationState::empty(pair, human).map_err(runtime)?;

    writeln!(out, "chatting with the {} policy; {QUIT} or end of input to leave", policy.kind()).map_err(runtime)?;
    loop {
        write!(out, "you> ").map_err(runtime)?;
        out.flush().map_err(runtime)?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(runtime)? == 0 {
            writeln!(out).map_err(runtime)?;
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == QUIT {
            break;
        }
        let said = state.action(text);
        let before_reply = state.append_action(&said).map_err(runtime)?;
        let turn_seed = seed::derive(cfg.run.seed, stream::CHAT, before_reply.len() as u64);
        let reply = policy.generate(&before_reply, turn_seed).map_err(|e: PolicyError| runtime(e))?;
        state = before_reply.append_action(&reply).map_err(runtime)?;
        writeln!(out, "model> {}", reply.content()).map_err(runtime)?;

        if let Some(scorers) = &scorers {
            let estimate_seed = seed::derive(turn_seed, stream::TARGET_RESPONSE, 0);
            match estimate_target_reward(policy.as_ref(), scorers, &reply, &before_reply, estimate_seed) {
                Ok(est) => writeln!(
                    out,
                    "  estimated reward for you: extrinsic {:.4} + intrinsic {:.4} = {:.4}",
                    est.reward.extrinsic(),
                    est.reward.intrinsic(),
                    est.reward.total()
                )
                .map_err(runtime)?,
                Err(e) => writeln!(err, "warning: reward estimate unavailable: {e}").map_err(runtime)?,
            }
        }
        let new = &state.messages()[state.len() - 2..];
        write_transcript(&mut transcript, "chat", new)
            .and_then(|_| transcript.flush())
            .map_err(io_error(&path))?;
    }
    transcript.flush().map_err(io_error(&path))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub prompts: usize,
    pub skipped: usize,
}

pub fn cmd_ingest_check(
    cfg: &LoadedConfig,
    lenient: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<IngestReport, HarnessError> {
    let ingested = load_dataset(cfg, lenient)?;
    for d in &ingested.skipped {
        writeln!(err, "skipped line {}: {}", d.line, d.reason).map_err(runtime)?;
    }
    writeln!(
        out,
        "{}: {} prompts ok, {} lines skipped",
        cfg.run.dataset_path.display(),
        ingested.dataset.len(),
        ingested.skipped.len()
    )
    .map_err(runtime)?;
    Ok(IngestReport {
        prompts: ingested.dataset.len(),
        skipped: ingested.skipped.len(),
    })
}
