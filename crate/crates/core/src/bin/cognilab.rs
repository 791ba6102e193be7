use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cognilab::config::TrainConfig;
use cognilab::copo::{Algo, IterationMetrics};
use cognilab::cosft::{
    build_adaptthink_dataset, build_balanced_dataset, build_expert_selected_dataset,
    collect_expert_trajectories, train_cosft,
};
use cognilab::envs::{catalogue, EnvId, Split};
use cognilab::harness::runs::{load_report, read_jsonl, write_json, RunPaths};
use cognilab::harness::{
    compare_runs, cosft_from_config, emit_plot_data, evaluate_policy, profile_report, run_training,
    RunError,
};
use cognilab::policy::{checkpoint, Policy, PolicyModel, Vocabulary};

#[derive(Parser)]
#[command(
    name = "cognilab",
    version,
    about = "Level-aware agent training on toy text environments"
)]
struct Cli {
    /// Model checkpoint: input for train/eval/analyze, output for cosft.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Task catalogue.
    Envs {
        #[command(subcommand)]
        cmd: EnvsCmd,
    },
    /// Build a level-annotated dataset; with --checkpoint also train a model on it.
    Cosft {
        #[arg(long, value_enum, default_value = "balanced")]
        mode: Mode,
        #[arg(long, default_value = "gridhouse")]
        env: EnvId,
        /// Number of SFT-split tasks to draw expert runs from.
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// RL from a CoSFT checkpoint (or a fresh CoSFT run when none is given).
    Train {
        #[arg(long, default_value = "copo")]
        algo: Algo,
        #[arg(long, default_value = "gridhouse")]
        env: EnvId,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the evaluation split.
    Eval {
        #[arg(long, default_value = "gridhouse")]
        env: EnvId,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Figure tables from a run directory.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired comparison of two evaluation reports (files or run directories).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnvsCmd {
    List {
        #[arg(long, default_value = "gridhouse")]
        env: EnvId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the catalogue as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Balanced,
    Expert,
    Adaptthink,
}

type Res = Result<(), Box<dyn std::error::Error>>;

fn load_config(path: Option<&Path>, env: EnvId) -> Result<TrainConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::for_env(env),
    })
}

fn need_checkpoint(c: &Option<PathBuf>) -> Result<Policy, Box<dyn std::error::Error>> {
    let p = c.as_ref().ok_or("--checkpoint is required")?;
    Ok(checkpoint::load(p)?)
}

fn envs_list(env: EnvId, seed: u64, json: Option<PathBuf>) -> Res {
    let rows = catalogue(env, seed, 0..env.suite_size())?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<6} {:<5} {:<14} {:<7} {:>6}  instruction",
        "task", "split", "family", "tier", "oracle"
    )?;
    for r in &rows {
        let split = [Split::Sft, Split::Rl, Split::Eval]
            .into_iter()
            .find(|s| env.split(*s).contains(&r.task_id))
            .map(|s| format!("{s:?}").to_lowercase())
            .unwrap_or_default();
        let tier = format!("{:?}", r.tier).to_lowercase();
        writeln!(
            out,
            "{:<6} {:<5} {:<14} {:<7} {:>6}  {}",
            r.task_id, split, r.family, tier, r.oracle_len, r.instruction
        )?;
    }
    if let Some(p) = json {
        write_json(&rows, &p)?;
    }
    Ok(())
}

fn cosft(
    cli_ckpt: Option<PathBuf>,
    mode: Mode,
    env: EnvId,
    n: usize,
    seed: u64,
    out: PathBuf,
    config: Option<PathBuf>,
) -> Res {
    let mut cfg = load_config(config.as_deref(), env)?;
    cfg.seed = seed;
    let vocab = Vocabulary::standard();
    let tasks: Vec<usize> = env.split(Split::Sft).take(n).collect();
    let episodes = collect_expert_trajectories(env, &tasks, cfg.env_seed)?;
    let limits = cfg.limits();
    let data = match mode {
        Mode::Balanced => build_balanced_dataset(&episodes, &vocab, &limits, seed)?,
        Mode::Expert => build_expert_selected_dataset(&episodes, &vocab, &limits, seed)?,
        Mode::Adaptthink => build_adaptthink_dataset(&episodes, &vocab, &limits, seed)?,
    };
    let mut text = String::new();
    for ex in &data {
        text.push_str(&serde_json::to_string(ex)?);
        text.push('\n');
    }
    fs::write(&out, text).map_err(|e| format!("{}: {e}", out.display()))?;
    let mut counts = [0usize; 4];
    for ex in &data {
        counts[ex.level.index()] += 1;
    }
    println!("examples {} levels L1..L4 {:?}", data.len(), counts);
    if let Some(ckpt) = cli_ckpt {
        let mut policy = Policy::new(PolicyModel::new(cfg.model(&vocab), seed), vocab);
        let losses = train_cosft(&mut policy, &data, &cfg.sft())?;
        for (e, l) in losses.iter().enumerate() {
            println!("epoch {e} loss {l:.6}");
        }
        checkpoint::save(&policy, &ckpt)?;
    }
    Ok(())
}

fn train_cmd(
    ckpt: Option<PathBuf>,
    algo: Algo,
    env: EnvId,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
) -> Res {
    let mut cfg = load_config(config.as_deref(), env)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let init = match ckpt {
        Some(p) => checkpoint::load(&p)?,
        None => {
            let (p, losses) = cosft_from_config(&cfg, env)?;
            fs::create_dir_all(&out)?;
            checkpoint::save(&p, &out.join("cosft.ckpt"))?;
            println!(
                "cosft final loss {:.6}",
                losses.last().copied().unwrap_or(f64::NAN)
            );
            p
        }
    };
    let s = run_training(&cfg, env, algo, &init, &out)?;
    println!(
        "{} {} seed {}: success {:.3} tokens {:.1} levels {:?}",
        s.algo,
        s.env,
        s.seed,
        s.final_eval.success_rate.unwrap_or(f64::NAN),
        s.final_eval.mean_tokens.unwrap_or(f64::NAN),
        s.eval_level_usage
    );
    Ok(())
}

fn eval_cmd(
    ckpt: Option<PathBuf>,
    env: EnvId,
    n: usize,
    seed: u64,
    config: Option<PathBuf>,
    out: PathBuf,
) -> Res {
    let policy = need_checkpoint(&ckpt)?;
    let mut cfg = load_config(config.as_deref(), env)?;
    cfg.eval_episodes = n;
    let report = evaluate_policy(&policy, &cfg, env, seed);
    write_json(&report, &out)?;
    let a = &report.aggregates;
    println!(
        "episodes {} success {:?} score {:?} tokens {:?} levels {:?}",
        a.episodes, a.success_rate, a.mean_score, a.mean_tokens, a.level_histogram
    );
    Ok(())
}

fn analyze(input: PathBuf, out: PathBuf) -> Res {
    let paths = RunPaths::new(&input);
    let metrics: Option<Vec<IterationMetrics>> = match read_jsonl(&paths.metrics()) {
        Ok(m) => Some(m),
        Err(RunError::Io { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let report = load_report(&input).ok();
    if metrics.is_none() && report.is_none() {
        return Err(format!(
            "{} holds neither metrics.jsonl nor eval.json",
            input.display()
        )
        .into());
    }
    let written = emit_plot_data(metrics.as_deref(), report.as_ref(), &out)?;
    if let Some(r) = &report {
        write_json(&profile_report(r), &out.join("profile.json"))?;
    }
    for w in written {
        println!("{}", out.join(w).display());
    }
    Ok(())
}

fn compare(a: PathBuf, b: PathBuf, out: Option<PathBuf>) -> Res {
    let (ra, rb) = (load_report(&a)?, load_report(&b)?);
    let c = compare_runs(&ra, &rb)?;
    println!("metric,a,b,delta");
    println!(
        "success_rate,{:.6},{:.6},{:.6}",
        c.success_rate_a, c.success_rate_b, c.success_rate_delta
    );
    println!(
        "mean_tokens,{:.3},{:.3},{:.3}",
        c.mean_tokens_a, c.mean_tokens_b, c.mean_tokens_delta
    );
    println!("token_reduction,,,{:.6}", c.token_reduction);
    if let Some(p) = out {
        write_json(&c, &p)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Envs {
            cmd: EnvsCmd::List { env, seed, json },
        } => envs_list(env, seed, json),
        Cmd::Cosft {
            mode,
            env,
            n,
            seed,
            out,
            config,
        } => cosft(cli.checkpoint, mode, env, n, seed, out, config),
        Cmd::Train {
            algo,
            env,
            config,
            seed,
            out,
        } => train_cmd(cli.checkpoint, algo, env, config, seed, out),
        Cmd::Eval {
            env,
            n,
            seed,
            config,
            out,
        } => eval_cmd(cli.checkpoint, env, n, seed, config, out),
        Cmd::Analyze { input, out } => analyze(input, out),
        Cmd::Compare { a, b, out } => compare(a, b, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
