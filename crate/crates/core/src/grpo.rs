//! Group-relative advantages, per-strategy gradients, Adam, and the staged
//! training loop.
//!
//! Sign convention: gradient buffers hold `+∇J` and the optimizer ascends.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{ConfigError, Error, Result};
use crate::eval::{evaluate, is_repeat, EvalConfig, EvalReport, RepeatMode};
use crate::policy::{GradBuffer, PolicyParams, MAX_TURN_LEN};
use crate::rewards::{RewardWeights, TrajRewardParams};
use crate::rollout::{
    rollout_full, rollout_shared, rollout_single, turnwise_is_single, GroupRollout, RolloutEnv, Sampling, Scoring,
    Strategy, Turn,
};
use crate::seed::{self, tag};

pub const ADV_EPS: f64 = 1e-6;

/// `(R_i - mean) / std` with the population std; all zeros when std < `eps`.
pub fn advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= eps) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Adds `coef · ∇ mean_t log π(o_t | ctx)` for one turn.
fn add_turn(params: &PolicyParams, turn: &Turn, coef: f64, buf: &mut GradBuffer) {
    if coef == 0.0 || turn.response.is_empty() {
        return;
    }
    let c = coef / turn.response.len() as f64;
    params
        .accumulate_grad(&turn.context, &turn.response, c, buf)
        .expect("rollout tokens come from the vocabulary");
}

fn grad_turns(group: &GroupRollout, params: &PolicyParams, eps: f64, turns: &[usize]) -> GradBuffer {
    let adv = advantages(&group.rewards, eps);
    let mut buf = GradBuffer::for_params(params);
    for (traj, a) in group.trajectories.iter().zip(adv) {
        for &t in turns {
            add_turn(params, &traj.turns[t], a, &mut buf);
        }
    }
    buf
}

/// `Σ_i A_i ∇[mean log π(o¹_i|q) + mean log π(o²_i|q,o¹_i,f¹_i)]`.
pub fn grad_full(group: &GroupRollout, params: &PolicyParams, eps: f64) -> GradBuffer {
    assert_eq!(group.strategy, Strategy::Full);
    grad_turns(group, params, eps, &[0, 1])
}

/// Second turns only; the shared first turn is conditioning context.
pub fn grad_shared(group: &GroupRollout, params: &PolicyParams, eps: f64) -> GradBuffer {
    assert_eq!(group.strategy, Strategy::Shared);
    grad_turns(group, params, eps, &[1])
}

pub fn grad_single(group: &GroupRollout, params: &PolicyParams, eps: f64) -> GradBuffer {
    assert_eq!(group.strategy, Strategy::Single);
    grad_turns(group, params, eps, &[0])
}

pub fn grad_group(group: &GroupRollout, params: &PolicyParams, eps: f64) -> GradBuffer {
    match group.strategy {
        Strategy::Full => grad_full(group, params, eps),
        Strategy::Shared => grad_shared(group, params, eps),
        Strategy::Single => grad_single(group, params, eps),
        Strategy::Infer => panic!("inference trajectories carry no group rewards"),
    }
}

/// Adam with bias correction, ascending the buffer's direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. A zero gradient leaves parameters untouched only while
    /// the moments are still zero, as in any momentum method.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] += lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Checks the buffer and applies one Adam step.
pub fn opt_step(params: &mut PolicyParams, buf: &GradBuffer, adam: &mut Adam, lr: f64, step: usize) -> Result<()> {
    if let Some(i) = buf.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            step,
            detail: format!("component {i} = {}", buf.data[i]),
        });
    }
    adam.step(params.as_mut_slice(), &buf.data, lr);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStrategy {
    Shared,
    Full,
    /// Per task, a seeded coin picks single-turn or shared-first-turn.
    Turnwise,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub strategy: StageStrategy,
    pub epochs: usize,
    /// Optional cap on optimizer steps in this stage.
    pub max_steps: Option<usize>,
    pub gamma: f64,
    pub eta: f64,
    /// Single-turn probability for the turnwise strategy.
    pub mix: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            strategy: StageStrategy::Full,
            epochs: 1,
            max_steps: None,
            gamma: 0.0,
            eta: 0.0,
            mix: 0.5,
        }
    }
}

impl StageConfig {
    pub fn shared() -> Self {
        StageConfig {
            strategy: StageStrategy::Shared,
            ..Default::default()
        }
    }

    pub fn full(gamma: f64, eta: f64) -> Self {
        StageConfig {
            strategy: StageStrategy::Full,
            gamma,
            eta,
            ..Default::default()
        }
    }

    pub fn traj_params(&self) -> TrajRewardParams {
        TrajRewardParams {
            gamma: self.gamma,
            eta: self.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stages: Vec<StageConfig>,
    pub group_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub max_turn_len: usize,
    pub seed: u64,
    /// Held-out evaluation every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_tasks: usize,
    /// Checkpoint every this many steps (0: only at stage ends).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: vec![StageConfig::shared(), StageConfig::full(0.0, 0.0)],
            group_size: 8,
            batch_size: 32,
            lr: 1e-3,
            alpha: 0.9,
            beta: 0.0,
            temperature: 1.0,
            max_turn_len: MAX_TURN_LEN,
            seed: 0,
            eval_every: 0,
            eval_tasks: 200,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages.is_empty() {
            return Err(ConfigError::invalid("stages", "at least one stage is required"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let key = |k: &str| format!("stages[{i}].{k}");
            for (k, v) in [("gamma", s.gamma), ("eta", s.eta)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ConfigError::invalid(key(k), "must be a finite value >= 0"));
                }
            }
            if !(0.0..=1.0).contains(&s.mix) {
                return Err(ConfigError::invalid(key("mix"), "must be in [0, 1]"));
            }
        }
        if self.group_size < 2 {
            return Err(ConfigError::invalid("group_size", "must be at least 2"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("batch_size", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ConfigError::invalid("lr", "must be a positive finite number"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ConfigError::invalid("temperature", "must be >= 0"));
        }
        if self.max_turn_len == 0 || self.max_turn_len > MAX_TURN_LEN {
            return Err(ConfigError::invalid("max_turn_len", format!("must be in 1..={MAX_TURN_LEN}")));
        }
        self.weights()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<RewardWeights, ConfigError> {
        RewardWeights::new(self.alpha, self.beta)
    }

    pub fn sampling(&self) -> Sampling {
        Sampling {
            temperature: self.temperature,
            max_turn_len: self.max_turn_len,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub stage: usize,
    pub mean_r1: f64,
    /// Absent when no trajectory in the batch had a second turn.
    pub mean_r2: Option<f64>,
    pub mean_format: f64,
    pub mean_rule: f64,
    pub mean_judge: f64,
    pub mean_think_len: f64,
    pub mean_code_len: f64,
    pub repeated_code_rate: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl StepMetrics {
    pub fn from_groups(step: usize, stage: usize, groups: &[GroupRollout]) -> StepMetrics {
        let trajs = || groups.iter().flat_map(|g| &g.trajectories);
        let finals = || trajs().map(|t| t.turns.last().expect("non-empty trajectory"));
        let all_turns = || trajs().flat_map(|t| &t.turns);
        StepMetrics {
            step,
            stage,
            mean_r1: mean(trajs().map(|t| t.turns[0].rewards.composite)).unwrap_or(0.0),
            mean_r2: mean(trajs().filter(|t| t.turns.len() > 1).map(|t| t.turns[1].rewards.composite)),
            mean_format: mean(finals().map(|t| t.rewards.format)).unwrap_or(0.0),
            mean_rule: mean(finals().map(|t| t.rewards.rule)).unwrap_or(0.0),
            mean_judge: mean(finals().map(|t| t.rewards.judge)).unwrap_or(0.0),
            mean_think_len: mean(all_turns().map(|t| t.think_len() as f64)).unwrap_or(0.0),
            mean_code_len: mean(all_turns().map(|t| t.code_len() as f64)).unwrap_or(0.0),
            repeated_code_rate: mean(
                trajs()
                    .filter(|t| t.turns.len() > 1)
                    .map(|t| is_repeat(&t.turns[0], &t.turns[1], RepeatMode::Canonical) as u8 as f64),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub stage: usize,
    pub report: EvalReport,
}

/// Where training writes as it goes. Every sink is optional.
#[derive(Default)]
pub struct TrainSinks<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    pub evals: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub steps: usize,
    pub metrics: Vec<StepMetrics>,
    pub evals: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Rolls out one task under the stage's strategy.
pub fn rollout_for_stage(env: &RolloutEnv, task: &Task, stage: &StageConfig, g: usize) -> GroupRollout {
    match stage.strategy {
        StageStrategy::Shared => rollout_shared(env, task, g),
        StageStrategy::Full => rollout_full(env, task, g, &stage.traj_params()),
        StageStrategy::Single => rollout_single(env, task, g),
        StageStrategy::Turnwise => {
            if turnwise_is_single(env.seed, task.id(), env.step, stage.mix) {
                rollout_single(env, task, g)
            } else {
                rollout_shared(env, task, g)
            }
        }
    }
}

fn write_line<T: Serialize>(w: &mut Option<&mut dyn Write>, rec: &T, path: &str) -> Result<()> {
    if let Some(w) = w.as_mut() {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Runs every configured stage over `tasks`, on-policy, one update per batch.
pub fn train(
    cfg: &TrainConfig,
    init: PolicyParams,
    tasks: &[Task],
    eval_tasks: &[Task],
    scoring: &Scoring,
    sinks: &mut TrainSinks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init;
    let mut adam = Adam::new(params.len());
    let sampling = cfg.sampling();
    let eval_cfg = EvalConfig {
        scoring: scoring.clone(),
        seed: cfg.seed,
        ..EvalConfig::default()
    };
    let eval_set = &eval_tasks[..cfg.eval_tasks.min(eval_tasks.len())];
    let mut out = TrainOutcome {
        params: params.clone(),
        steps: 0,
        metrics: Vec::new(),
        evals: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut step = 0usize;
    for (si, stage) in cfg.stages.iter().enumerate() {
        let mut stage_steps = 0usize;
        'epochs: for epoch in 0..stage.epochs {
            let mut order: Vec<usize> = (0..tasks.len()).collect();
            order.shuffle(&mut seed::stream(&[tag::BATCH, cfg.seed, si as u64, epoch as u64]));
            for chunk in order.chunks(cfg.batch_size) {
                if stage.max_steps.is_some_and(|m| stage_steps >= m) {
                    break 'epochs;
                }
                let env = RolloutEnv {
                    params: &params,
                    sampling: &sampling,
                    scoring,
                    seed: cfg.seed,
                    step: step as u64,
                };
                let results: Vec<(GroupRollout, GradBuffer)> = chunk
                    .par_iter()
                    .map(|&i| {
                        let g = rollout_for_stage(&env, &tasks[i], stage, cfg.group_size);
                        let grad = grad_group(&g, &params, ADV_EPS);
                        (g, grad)
                    })
                    .collect();
                if let Some((g, _)) = results.iter().find(|(_, b)| !b.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "group gradient",
                        step,
                        detail: format!("task {} rewards {:?}", g.task_id, g.rewards),
                    });
                }
                let (groups, grads): (Vec<_>, Vec<_>) = results.into_iter().unzip();
                let mut total = GradBuffer::sum_ordered(params.len(), &grads);
                total.scale(1.0 / (groups.len() * cfg.group_size) as f64);
                opt_step(&mut params, &total, &mut adam, cfg.lr, step)?;
                step += 1;
                stage_steps += 1;

                let m = StepMetrics::from_groups(step, si + 1, &groups);
                write_line(&mut sinks.metrics, &m, "metrics log")?;
                out.metrics.push(m);
                if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !eval_set.is_empty() {
                    let (report, _) = evaluate(&params, eval_set, &eval_cfg);
                    let rec = EvalRecord {
                        step,
                        stage: si + 1,
                        report,
                    };
                    write_line(&mut sinks.evals, &rec, "eval log")?;
                    out.evals.push(rec);
                }
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    save_checkpoint(&params, sinks, &format!("step{step:06}.ckpt"), &mut out)?;
                }
            }
        }
        save_checkpoint(&params, sinks, &format!("stage{}.ckpt", si + 1), &mut out)?;
    }
    out.params = params;
    out.steps = step;
    Ok(out)
}

fn save_checkpoint(params: &PolicyParams, sinks: &TrainSinks, name: &str, out: &mut TrainOutcome) -> Result<()> {
    if let Some(dir) = &sinks.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        params.save(&path)?;
        out.checkpoints.push(path);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Difficulty;

    #[test]
    fn two_member_group() {
        assert_eq!(advantages(&[0.0, 1.0], ADV_EPS), vec![-1.0, 1.0]);
    }

    #[test]
    fn degenerate_groups_are_zero() {
        assert_eq!(advantages(&[0.3; 8], ADV_EPS), vec![0.0; 8]);
        assert_eq!(advantages(&[0.3, 0.3 + 1e-9], ADV_EPS), vec![0.0; 2]);
    }

    #[test]
    fn advantages_are_standardized() {
        let a = advantages(&[0.1, 0.5, 0.2, 0.9, 0.0, 0.4], ADV_EPS);
        let m = a.iter().sum::<f64>() / 6.0;
        let v = a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adam_solves_a_quadratic() {
        // maximize -(x - 3)^2
        let mut x = [0.0];
        let mut adam = Adam::new(1);
        for _ in 0..10_000 {
            let g = [-2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g, 1e-2);
        }
        assert!((x[0] - 3.0).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn zero_buffer_leaves_fresh_params_alone() {
        let mut p = PolicyParams::init(0);
        let before = p.clone();
        let mut adam = Adam::new(p.len());
        opt_step(&mut p, &GradBuffer::for_params(&before), &mut adam, 1e-3, 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_buffer_aborts() {
        let mut p = PolicyParams::init(0);
        let mut buf = GradBuffer::for_params(&p);
        buf.data[7] = f64::NAN;
        let err = opt_step(&mut p, &buf, &mut Adam::new(buf.data.len()), 1e-3, 4).unwrap_err();
        assert!(err.to_string().contains("step 4"));
    }

    #[test]
    fn equal_reward_groups_give_no_gradient() {
        let task = Task::generate(4, Difficulty::Easy);
        let params = PolicyParams::init(3);
        let sampling = Sampling {
            temperature: 1.0,
            max_turn_len: 16,
        };
        let scoring = Scoring::default();
        let env = RolloutEnv {
            params: &params,
            sampling: &sampling,
            scoring: &scoring,
            seed: 0,
            step: 0,
        };
        let mut g = rollout_full(&env, &task, 4, &TrajRewardParams::default());
        g.rewards = vec![0.25; 4];
        assert!(grad_full(&g, &params, ADV_EPS).is_zero());
    }

    #[test]
    fn config_validation_names_the_key() {
        let mut c = TrainConfig::default();
        c.group_size = 1;
        assert_eq!(c.validate().unwrap_err().key, "group_size");
        let mut c = TrainConfig::default();
        c.stages[1].eta = -1.0;
        assert_eq!(c.validate().unwrap_err().key, "stages[1].eta");
        let mut c = TrainConfig::default();
        c.alpha = 0.8;
        c.beta = 0.3;
        assert!(c.validate().is_err());
    }
}
