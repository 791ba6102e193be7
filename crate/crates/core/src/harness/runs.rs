//! Run directories: CoSFT initialization, training with streamed metrics, final evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::copo::trainer::{train, Algo, TrainError};
use crate::copo::{ExpansionRecord, IterationMetrics};
use crate::cosft::{build_balanced_dataset, collect_expert_trajectories, train_cosft, CosftError};
use crate::envs::{EnvError, EnvId, Split};
use crate::policy::checkpoint::{self, CheckpointError};
use crate::policy::{Policy, PolicyModel, Vocabulary};

use super::analysis::{profile_report, DistributionProfile};
use super::eval::{eval_tasks, evaluate, Agent, Aggregates, EvalReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Cosft(#[from] CosftError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Plot(#[from] super::analysis::PlotError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| RunError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Fresh model trained on a level-balanced dataset from the first
/// `cfg.sft_tasks` tasks of the SFT split.
pub fn cosft_from_config(cfg: &TrainConfig, env: EnvId) -> Result<(Policy, Vec<f64>), RunError> {
    let vocab = Vocabulary::standard();
    let tasks: Vec<usize> = env.split(Split::Sft).take(cfg.sft_tasks).collect();
    let episodes = collect_expert_trajectories(env, &tasks, cfg.env_seed)?;
    let data = build_balanced_dataset(&episodes, &vocab, &cfg.limits(), cfg.seed)?;
    let mut policy = Policy::new(PolicyModel::new(cfg.model(&vocab), cfg.seed), vocab);
    let losses = train_cosft(&mut policy, &data, &cfg.sft())?;
    Ok((policy, losses))
}

/// Evaluation of `policy` on the first `cfg.eval_episodes` evaluation tasks.
pub fn evaluate_policy(policy: &Policy, cfg: &TrainConfig, env: EnvId, seed: u64) -> EvalReport {
    let tasks = eval_tasks(env, cfg.eval_episodes);
    evaluate(
        Agent::Policy(policy),
        env,
        &tasks,
        cfg.env_seed,
        &cfg.rollout(cfg.eval_temperature),
        seed,
    )
    .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: Algo,
    pub env: EnvId,
    pub seed: u64,
    pub iterations: usize,
    pub final_eval: Aggregates,
    /// Level shares over the evaluation episodes.
    pub eval_level_usage: Option<[f64; 4]>,
    /// Level shares over the last training iteration's rollouts.
    pub last_rollout_level_usage: Option<[f64; 4]>,
    pub profile: DistributionProfile,
}

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn expansions(&self) -> PathBuf {
        self.dir.join("expansions.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("policy.ckpt")
    }
    pub fn eval(&self) -> PathBuf {
        self.dir.join("eval.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
}

struct Lines {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Lines {
    fn create(path: PathBuf) -> Result<Self, RunError> {
        let f = File::create(&path).map_err(io_err(&path))?;
        Ok(Self {
            path,
            w: BufWriter::new(f),
        })
    }
    fn push<T: Serialize>(&mut self, v: &T) -> Result<(), RunError> {
        let line = serde_json::to_string(v).expect("serializable");
        writeln!(self.w, "{line}").map_err(io_err(&self.path))
    }
    fn flush(&mut self) -> Result<(), RunError> {
        self.w.flush().map_err(io_err(&self.path))
    }
}

/// Trains from `init` and writes the run directory: resolved config, metrics
/// and expansion streams, final checkpoint, evaluation report and summary.
pub fn run_training(
    cfg: &TrainConfig,
    env: EnvId,
    algo: Algo,
    init: &Policy,
    out: &Path,
) -> Result<RunSummary, RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let paths = RunPaths::new(out);
    fs::write(paths.config(), cfg.to_toml()).map_err(io_err(&paths.config()))?;
    let mut metrics = Lines::create(paths.metrics())?;
    let mut expansions = Lines::create(paths.expansions())?;
    let mut last: Option<IterationMetrics> = None;
    let mut sink_err: Option<RunError> = None;
    let policy = train(
        cfg,
        env,
        init,
        algo,
        |m: &IterationMetrics, recs: &[ExpansionRecord]| {
            let mut go = || -> Result<(), RunError> {
                metrics.push(m)?;
                metrics.flush()?;
                for r in recs {
                    expansions.push(r)?;
                }
                expansions.flush()
            };
            if sink_err.is_none() {
                sink_err = go().err();
            }
            last = Some(m.clone());
        },
    )?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    checkpoint::save(&policy, &paths.checkpoint())?;
    let report = evaluate_policy(&policy, cfg, env, cfg.seed);
    write_json(&report, &paths.eval())?;
    let summary = RunSummary {
        algo,
        env,
        seed: cfg.seed,
        iterations: cfg.iterations,
        eval_level_usage: report.aggregates.level_histogram,
        final_eval: report.aggregates.clone(),
        last_rollout_level_usage: last.map(|m| m.level_histogram),
        profile: profile_report(&report),
    };
    write_json(&summary, &paths.summary())?;
    Ok(summary)
}

/// Loads a report from a file or from a run directory's `eval.json`.
pub fn load_report(path: &Path) -> Result<EvalReport, RunError> {
    if path.is_dir() {
        read_json(&RunPaths::new(path).eval())
    } else {
        read_json(path)
    }
}
