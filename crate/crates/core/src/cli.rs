//! The `chartloop` command line: data generation, cold start, training,
//! evaluation and single-trajectory inspection.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort, 1 anything else.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::chartlang::detokenize;
use crate::coldstart::run_coldstart;
use crate::config::RunConfig;
use crate::data::{
    generate_split, read_tasks, write_tasks, DifficultyMix, Split, Task, DEFAULT_EVAL_SIZE, DEFAULT_TRAIN_SIZE,
};
use crate::error::{ConfigError, Error, Result};
use crate::eval::{evaluate, EvalConfig, RepeatMode, JUDGE_THRESHOLD, MAX_EVAL_TURNS};
use crate::grpo::{train, TrainSinks};
use crate::policy::PolicyParams;
use crate::rewards::{Judge, RemoteJudge};
use crate::rollout::{infer_multi, Sampling, Scoring, Trajectory, TrajectoryRecord};

#[derive(Debug, Parser)]
#[command(name = "chartloop", version, about = "Multi-turn self-correction GRPO on ChartLang")]
pub struct Cli {
    /// Master seed; overrides every seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for rollouts and evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// URL of a remote judge; used only when `beta > 0`.
    #[arg(long, global = true)]
    pub judge_endpoint: Option<String>,
    #[arg(long, global = true, default_value_t = 2000)]
    pub judge_timeout_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the train and eval task splits.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRAIN_SIZE)]
        train_size: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SIZE)]
        eval_size: usize,
    },
    /// Behaviour cloning, correction-data construction, second-turn cloning.
    Coldstart {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Staged GRPO from a checkpoint (or a fresh policy).
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Multi-turn evaluation report.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[command(flatten)]
        infer: InferArgs,
        #[arg(long, value_enum, default_value_t = RepeatArg::Canonical)]
        repeat_mode: RepeatArg,
        #[arg(long, default_value_t = JUDGE_THRESHOLD)]
        judge_threshold: f64,
        /// Directory for report.json, report.tsv and trajectories.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one inference trajectory with per-turn rewards.
    Rollout {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        task_id: u64,
        #[command(flatten)]
        infer: InferArgs,
        /// Print the trajectory log line instead of the readable form.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=MAX_EVAL_TURNS as u64))]
    pub turns: u64,
    /// Sampling temperature; 0 decodes greedily.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RepeatArg {
    Canonical,
    Exact,
}

impl From<RepeatArg> for RepeatMode {
    fn from(r: RepeatArg) -> Self {
        match r {
            RepeatArg::Canonical => RepeatMode::Canonical,
            RepeatArg::Exact => RepeatMode::Exact,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

struct Ctx {
    cfg: RunConfig,
    scoring: Scoring,
}

impl Ctx {
    fn master_seed(&self) -> u64 {
        self.cfg.train.seed
    }

    fn tasks(&self, flag: &Option<PathBuf>, from_cfg: &Option<PathBuf>, split: Split, n: usize) -> Result<Vec<Task>> {
        match flag.as_ref().or(from_cfg.as_ref()) {
            Some(p) => read_tasks(p),
            None => Ok(generate_split(self.master_seed(), split, n, &DifficultyMix::default())),
        }
    }

    fn train_tasks(&self, flag: &Option<PathBuf>) -> Result<Vec<Task>> {
        self.tasks(flag, &self.cfg.paths.train_data, Split::Train, DEFAULT_TRAIN_SIZE)
    }

    fn eval_tasks(&self, flag: &Option<PathBuf>) -> Result<Vec<Task>> {
        self.tasks(flag, &self.cfg.paths.eval_data, Split::Eval, DEFAULT_EVAL_SIZE)
    }

    fn checkpoint(&self, flag: &Option<PathBuf>) -> Result<PolicyParams> {
        match flag.as_ref().or(self.cfg.paths.checkpoint.as_ref()) {
            Some(p) => PolicyParams::load(p),
            None => Err(ConfigError::invalid("checkpoint", "required: pass --checkpoint or set paths.checkpoint").into()),
        }
    }

    fn out_dir(&self, flag: &Option<PathBuf>) -> Result<PathBuf> {
        let dir = flag
            .clone()
            .or_else(|| self.cfg.paths.out_dir.clone())
            .ok_or_else(|| ConfigError::invalid("out", "required: pass --out or set paths.out_dir"))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.cfg.write_echo(&dir)?;
        Ok(dir)
    }

    fn eval_config(&self, infer: &InferArgs, repeat_mode: RepeatMode, judge_threshold: f64) -> Result<EvalConfig> {
        if !(infer.temperature.is_finite() && infer.temperature >= 0.0) {
            return Err(ConfigError::invalid("temperature", "must be >= 0").into());
        }
        Ok(EvalConfig {
            turns: infer.turns as usize,
            sampling: Sampling {
                temperature: infer.temperature,
                max_turn_len: self.cfg.train.max_turn_len,
            },
            scoring: self.scoring.clone(),
            seed: self.master_seed(),
            repeat_mode,
            judge_threshold,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Command::Train { overrides: o, .. } = &cli.command {
        if let Some(v) = o.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = o.group_size {
            cfg.train.group_size = v;
        }
        if let Some(v) = o.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = o.alpha {
            cfg.train.alpha = v;
        }
        if let Some(v) = o.beta {
            cfg.train.beta = v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Readable multi-line rendering of one trajectory.
pub fn format_trajectory(task: &Task, traj: &Trajectory) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task {} ({:?})", task.id(), task.difficulty);
    let _ = writeln!(s, "reference: {}", task.program);
    for (t, turn) in traj.turns.iter().enumerate() {
        let r = &turn.rewards;
        let _ = writeln!(s, "turn {} (context {} tokens)", t + 1, turn.context.len());
        let _ = writeln!(s, "  response: {}", detokenize(&turn.response));
        match &turn.exec {
            Ok(_) => {
                let _ = writeln!(s, "  exec: ok");
            }
            Err(e) => {
                let _ = writeln!(s, "  exec: {} ({})", e.code, e.message);
            }
        }
        let _ = writeln!(
            s,
            "  rewards: format {:.4} text {:.4} type {:.4} color {:.4} layout {:.4} rule {:.4} judge {:.4} composite {:.4}",
            r.format, r.text, r.chart_type, r.color, r.layout, r.rule, r.judge, r.composite
        );
        if let Some(f) = traj.feedbacks.get(t) {
            let _ = writeln!(s, "feedback {}: {}", t + 1, detokenize(&f.tokens));
        }
    }
    s
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::invalid("threads", "must be positive").into());
        }
        // A second call in the same process keeps the first pool, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let judge = match &cli.judge_endpoint {
        Some(ep) => Judge::Remote(Arc::new(RemoteJudge::new(
            ep.clone(),
            Duration::from_millis(cli.judge_timeout_ms),
            cli.threads.unwrap_or(4).max(1),
        ))),
        None => Judge::Heuristic,
    };
    let ctx = Ctx {
        scoring: Scoring {
            weights: cfg.train.weights()?,
            judge: judge.clone(),
        },
        cfg,
    };
    match &cli.command {
        Command::GenData {
            out,
            train_size,
            eval_size,
        } => {
            let dir = ctx.out_dir(out)?;
            let mix = DifficultyMix::default();
            let train_set = generate_split(ctx.master_seed(), Split::Train, *train_size, &mix);
            let eval_set = generate_split(ctx.master_seed(), Split::Eval, *eval_size, &mix);
            write_tasks(&dir.join("train.jsonl"), &train_set)?;
            write_tasks(&dir.join("eval.jsonl"), &eval_set)?;
            println!("wrote {} train and {} eval tasks to {}", train_set.len(), eval_set.len(), dir.display());
        }
        Command::Coldstart { train, out } => {
            let dir = ctx.out_dir(out)?;
            let tasks = ctx.train_tasks(train)?;
            let res = run_coldstart(&tasks, &ctx.cfg.coldstart)?;
            res.params.save(&dir.join("coldstart.ckpt"))?;
            res.sc_data.write(&dir.join("sc_data.jsonl"))?;
            let losses = res
                .bc_losses
                .iter()
                .enumerate()
                .map(|(i, l)| ("bc", i, l))
                .chain(res.multiturn_losses.iter().enumerate().map(|(i, l)| ("multiturn", i, l)))
                .map(|(stage, step, loss)| serde_json::json!({"stage": stage, "step": step, "loss": loss}).to_string());
            write_lines(&dir.join("coldstart_losses.jsonl"), losses)?;
            println!(
                "cold start: {} correction examples kept of {} ({:.3}); checkpoint {}",
                res.sc_data.examples.len(),
                res.sc_data.candidates,
                res.sc_data.retention(),
                dir.join("coldstart.ckpt").display()
            );
        }
        Command::Train {
            checkpoint,
            train: train_path,
            eval,
            out,
            ..
        } => {
            let dir = ctx.out_dir(out)?;
            let init = match checkpoint.as_ref().or(ctx.cfg.paths.checkpoint.as_ref()) {
                Some(p) => PolicyParams::load(p)?,
                None => PolicyParams::init(ctx.master_seed()),
            };
            let tasks = ctx.train_tasks(train_path)?;
            let eval_tasks = if ctx.cfg.train.eval_every > 0 {
                ctx.eval_tasks(eval)?
            } else {
                Vec::new()
            };
            let metrics_path = dir.join("metrics.jsonl");
            let evals_path = dir.join("evals.jsonl");
            let mut metrics = create(&metrics_path)?;
            let mut evals = create(&evals_path)?;
            let mut sinks = TrainSinks {
                metrics: Some(&mut metrics),
                evals: Some(&mut evals),
                checkpoint_dir: Some(dir.join("checkpoints")),
            };
            let res = train(&ctx.cfg.train, init, &tasks, &eval_tasks, &ctx.scoring, &mut sinks)?;
            drop(sinks);
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            evals.flush().map_err(|e| Error::io(&evals_path, e))?;
            res.params.save(&dir.join("final.ckpt"))?;
            if let Some(m) = res.metrics.last() {
                println!(
                    "trained {} steps; last step mean_r1 {:.4} mean_rule {:.4}; checkpoint {}",
                    res.steps,
                    m.mean_r1,
                    m.mean_rule,
                    dir.join("final.ckpt").display()
                );
            }
        }
        Command::Eval {
            checkpoint,
            eval,
            infer,
            repeat_mode,
            judge_threshold,
            out,
        } => {
            let params = ctx.checkpoint(checkpoint)?;
            let tasks = ctx.eval_tasks(eval)?;
            let ecfg = ctx.eval_config(infer, (*repeat_mode).into(), *judge_threshold)?;
            let (report, trajs) = evaluate(&params, &tasks, &ecfg);
            let table = report.to_table();
            print!("{table}");
            if out.is_some() || ctx.cfg.paths.out_dir.is_some() {
                let dir = ctx.out_dir(out)?;
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(dir.join("report.json"), json).map_err(|e| Error::io(dir.join("report.json"), e))?;
                std::fs::write(dir.join("report.tsv"), table).map_err(|e| Error::io(dir.join("report.tsv"), e))?;
                write_lines(
                    &dir.join("trajectories.jsonl"),
                    trajs.iter().map(|t| TrajectoryRecord::from(t).to_json_line()),
                )?;
            }
        }
        Command::Rollout {
            checkpoint,
            eval,
            task_id,
            infer,
            json,
        } => {
            let params = ctx.checkpoint(checkpoint)?;
            let tasks = ctx.eval_tasks(eval)?;
            let task = tasks
                .iter()
                .find(|t| t.id() == *task_id)
                .ok_or_else(|| ConfigError::invalid("task_id", format!("no task with id {task_id}")))?;
            let ecfg = ctx.eval_config(infer, RepeatMode::Canonical, JUDGE_THRESHOLD)?;
            let traj = infer_multi(&params, task, ecfg.turns, &ecfg.sampling, &ecfg.scoring, ecfg.seed);
            if *json {
                println!("{}", TrajectoryRecord::from(&traj).to_json_line());
            } else {
                print!("{}", format_trajectory(task, &traj));
            }
        }
    }
    if let Judge::Remote(r) = &judge {
        if r.fallbacks() > 0 {
            eprintln!("remote judge fell back to the heuristic {} times", r.fallbacks());
        }
    }
    Ok(())
}
