//! Self-correction diagnostics over held-out tasks.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chartlang::{parse, Token};
use crate::data::Task;
use crate::policy::PolicyParams;
use crate::rollout::{infer_multi, Sampling, Scoring, Trajectory, Turn};

pub const MAX_EVAL_TURNS: usize = 5;

/// Default judge delta (on the [0, 1] scale) at or beyond which a turn counts
/// as improved / degraded.
pub const JUDGE_THRESHOLD: f64 = 0.1;

/// What counts as repeating the previous turn's code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepeatMode {
    /// Canonical forms are equal (subplot order and clause order ignored).
    #[default]
    Canonical,
    /// Code tokens are identical.
    Exact,
}

/// Canonical token form of a code block; unparseable code is its own form.
pub fn canonical_code(code: &[Token]) -> Vec<Token> {
    match parse(code) {
        Ok(p) => p.canonicalize(),
        Err(_) => code.to_vec(),
    }
}

pub fn is_repeat(prev: &Turn, next: &Turn, mode: RepeatMode) -> bool {
    match (&prev.code, &next.code) {
        (Some(a), Some(b)) => match mode {
            RepeatMode::Exact => a == b,
            RepeatMode::Canonical => canonical_code(a) == canonical_code(b),
        },
        _ => false,
    }
}

/// Comparison of turn `from` with turn `from + 1` (1-based turn numbers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    /// Mean rule delta over tasks executable in both turns; `None` when there are none.
    pub avg_improvement_both_exec: Option<f64>,
    pub n_both_exec: usize,
    pub pct_improved: f64,
    pub pct_degraded: f64,
    pub pct_improved_judge: f64,
    pub pct_degraded_judge: f64,
    pub repeated_code_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub turns: usize,
    pub judge_threshold: f64,
    pub exec_rate: Vec<f64>,
    pub mean_rule: Vec<f64>,
    pub mean_judge: Vec<f64>,
    pub mean_composite: Vec<f64>,
    pub transitions: Vec<Transition>,
}

impl EvalReport {
    /// Aggregates trajectories that all have the same number of turns.
    pub fn from_trajectories(trajs: &[Trajectory], mode: RepeatMode) -> EvalReport {
        Self::from_trajectories_with(trajs, mode, JUDGE_THRESHOLD)
    }

    pub fn from_trajectories_with(trajs: &[Trajectory], mode: RepeatMode, judge_threshold: f64) -> EvalReport {
        let n = trajs.len();
        let turns = trajs.first().map_or(0, |t| t.turns.len());
        assert!(trajs.iter().all(|t| t.turns.len() == turns), "ragged trajectories");
        let mean_of = |t: usize, f: &dyn Fn(&Turn) -> f64| {
            if n == 0 {
                0.0
            } else {
                trajs.iter().map(|tr| f(&tr.turns[t])).sum::<f64>() / n as f64
            }
        };
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let mut report = EvalReport {
            n_tasks: n,
            turns,
            judge_threshold,
            exec_rate: (0..turns).map(|t| mean_of(t, &|x| x.exec_ok() as u8 as f64)).collect(),
            mean_rule: (0..turns).map(|t| mean_of(t, &|x| x.rewards.rule)).collect(),
            mean_judge: (0..turns).map(|t| mean_of(t, &|x| x.rewards.judge)).collect(),
            mean_composite: (0..turns).map(|t| mean_of(t, &|x| x.rewards.composite)).collect(),
            transitions: Vec::new(),
        };
        for t in 1..turns {
            let pairs = || trajs.iter().map(|tr| (&tr.turns[t - 1], &tr.turns[t]));
            let both: Vec<f64> = pairs()
                .filter(|(a, b)| a.exec_ok() && b.exec_ok())
                .map(|(a, b)| b.rewards.rule - a.rewards.rule)
                .collect();
            report.transitions.push(Transition {
                from: t,
                to: t + 1,
                avg_improvement_both_exec: (!both.is_empty()).then(|| both.iter().sum::<f64>() / both.len() as f64),
                n_both_exec: both.len(),
                pct_improved: frac(pairs().filter(|(a, b)| b.rewards.rule > a.rewards.rule).count()),
                pct_degraded: frac(pairs().filter(|(a, b)| b.rewards.rule < a.rewards.rule).count()),
                pct_improved_judge: frac(
                    pairs()
                        .filter(|(a, b)| b.rewards.judge - a.rewards.judge >= judge_threshold)
                        .count(),
                ),
                pct_degraded_judge: frac(
                    pairs()
                        .filter(|(a, b)| a.rewards.judge - b.rewards.judge >= judge_threshold)
                        .count(),
                ),
                repeated_code_rate: frac(pairs().filter(|(a, b)| is_repeat(a, b, mode)).count()),
            });
        }
        report
    }

    /// The turn-1 → turn-2 comparison, absent for single-turn evaluations.
    pub fn first_transition(&self) -> Option<&Transition> {
        self.transitions.first()
    }

    /// Flat `metric<TAB>turn<TAB>value` table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric\tturn\tvalue\n");
        let num = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for t in 0..self.turns {
            for (name, v) in [
                ("exec_rate", self.exec_rate[t]),
                ("mean_rule", self.mean_rule[t]),
                ("mean_judge", self.mean_judge[t]),
                ("mean_composite", self.mean_composite[t]),
            ] {
                let _ = writeln!(out, "{name}\t{}\t{}", t + 1, num(Some(v)));
            }
        }
        let improved_judge = format!("pct_improved_judge@{}", self.judge_threshold);
        let degraded_judge = format!("pct_degraded_judge@{}", self.judge_threshold);
        for tr in &self.transitions {
            let label = format!("{}->{}", tr.from, tr.to);
            for (name, v) in [
                ("avg_improvement_both_exec", tr.avg_improvement_both_exec),
                ("pct_improved", Some(tr.pct_improved)),
                ("pct_degraded", Some(tr.pct_degraded)),
                (improved_judge.as_str(), Some(tr.pct_improved_judge)),
                (degraded_judge.as_str(), Some(tr.pct_degraded_judge)),
                ("repeated_code_rate", Some(tr.repeated_code_rate)),
            ] {
                let _ = writeln!(out, "{name}\t{label}\t{}", num(v));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub turns: usize,
    pub sampling: Sampling,
    pub scoring: Scoring,
    pub seed: u64,
    pub repeat_mode: RepeatMode,
    pub judge_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            turns: 2,
            sampling: Sampling::greedy(),
            scoring: Scoring::default(),
            seed: 0,
            repeat_mode: RepeatMode::Canonical,
            judge_threshold: JUDGE_THRESHOLD,
        }
    }
}

/// Runs multi-turn inference on every task (in parallel, order-stable) and
/// aggregates the report.
pub fn evaluate(params: &PolicyParams, tasks: &[Task], cfg: &EvalConfig) -> (EvalReport, Vec<Trajectory>) {
    assert!(cfg.turns >= 1, "need at least one turn");
    let trajs: Vec<Trajectory> = tasks
        .par_iter()
        .map(|t| infer_multi(params, t, cfg.turns, &cfg.sampling, &cfg.scoring, cfg.seed))
        .collect();
    let report = EvalReport::from_trajectories_with(&trajs, cfg.repeat_mode, cfg.judge_threshold);
    (report, trajs)
}
