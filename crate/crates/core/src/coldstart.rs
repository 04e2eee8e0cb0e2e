//! Cold start: behaviour cloning on reference programs, a scripted repair
//! teacher, rejection-sampled two-turn correction data, and behaviour cloning
//! on the second turns of that data.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chartlang::{detokenize, vocab, ChartProgram, Token};
use crate::data::{corrupt, Task};
use crate::error::{ConfigError, Error, Result};
use crate::grpo::{opt_step, Adam};
use crate::policy::{GradBuffer, PolicyParams};
use crate::rewards::rule_reward;
use crate::rollout::{build_context, build_feedback, score_response, task_context, Feedback, Scoring, Turn};
use crate::seed::{self, tag};

/// `<THINK> think </THINK> <CODE> code </CODE> <EOT>`.
pub fn fenced_response(think: &[Token], code: &[Token]) -> Vec<Token> {
    let mut r = Vec::with_capacity(think.len() + code.len() + 5);
    r.push(vocab::THINK_OPEN);
    r.extend_from_slice(think);
    r.push(vocab::THINK_CLOSE);
    r.push(vocab::CODE_OPEN);
    r.extend_from_slice(code);
    r.push(vocab::CODE_CLOSE);
    r.push(vocab::EOT);
    r
}

/// Single-turn imitation target for a task.
pub fn bc_target(task: &Task) -> Vec<Token> {
    fenced_response(&[vocab::PLAN], &task.program.serialize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 2,
            lr: 3e-3,
            batch_size: 16,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Mean per-token NLL of each batch, measured before its update.
    pub losses: Vec<f64>,
}

/// Maximizes the token-mean log-likelihood of each target given its context.
pub fn sft_train(params: PolicyParams, examples: &[(Vec<Token>, Vec<Token>)], cfg: &SftConfig) -> Result<SftOutcome> {
    let mut params = params;
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::new();
    let mut step = 0usize;
    'outer: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seed::stream(&[tag::COLDSTART, cfg.seed, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let parts: Vec<(GradBuffer, f64)> = chunk
                .par_iter()
                .map(|&i| {
                    let (ctx, target) = &examples[i];
                    let mut g = GradBuffer::for_params(&params);
                    let n = target.len() as f64;
                    params
                        .accumulate_grad(ctx, target, 1.0 / n, &mut g)
                        .expect("targets use the vocabulary");
                    let lp = params.logprob(ctx, target).expect("targets use the vocabulary");
                    (g, -lp.total / n)
                })
                .collect();
            let (grads, nll): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let mut total = GradBuffer::sum_ordered(params.len(), &grads);
            total.scale(1.0 / chunk.len() as f64);
            losses.push(nll.iter().sum::<f64>() / chunk.len() as f64);
            opt_step(&mut params, &total, &mut adam, cfg.lr, step)?;
            step += 1;
        }
    }
    Ok(SftOutcome { params, losses })
}

/// Behaviour cloning on `(task, reference program)` pairs.
pub fn bc_train(params: PolicyParams, tasks: &[Task], cfg: &SftConfig) -> Result<SftOutcome> {
    let examples: Vec<_> = tasks.iter().map(|t| (task_context(t), bc_target(t))).collect();
    sft_train(params, &examples, cfg)
}

/// A field the teacher put back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repair {
    Layout,
    Type(u8),
    Color(u8),
    Title(u8),
    Grid(u8),
    Legend(u8),
    Data(u8),
}

impl Repair {
    /// `fix LAYOUT` or `fix KEYWORD i`.
    pub fn tokens(self) -> Vec<Token> {
        let (kw, idx) = match self {
            Repair::Layout => (vocab::LAYOUT, None),
            Repair::Type(i) => (vocab::TYPE, Some(i)),
            Repair::Color(i) => (vocab::COLOR, Some(i)),
            Repair::Title(i) => (vocab::TITLE, Some(i)),
            Repair::Grid(i) => (vocab::GRID, Some(i)),
            Repair::Legend(i) => (vocab::LEGEND, Some(i)),
            Repair::Data(i) => (vocab::DATA, Some(i)),
        };
        let mut t = vec![vocab::FIX, kw];
        t.extend(idx.map(vocab::digit));
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Layout,
    Types,
    Colors,
    Titles,
    Flags,
    Data,
}

/// Repairs a seeded subset of the differing field kinds.
///
/// The differing kinds (layout, types, colours, titles, flags, data) are put
/// in a seeded order and the first `round(strength * n)` are copied from the
/// reference wholesale. Each kind drives one rule sub-score on its own, so a
/// repair never lowers the rule reward and larger strengths repair supersets.
/// `corrupted` must list its subplots in the same order as `reference`.
pub fn teacher_correct(
    corrupted: &ChartProgram,
    reference: &ChartProgram,
    strength: f64,
    seed: u64,
) -> (ChartProgram, Vec<Repair>) {
    assert_eq!(corrupted.subplots.len(), reference.subplots.len(), "not a corruption of this reference");
    let pairs = || corrupted.subplots.iter().zip(&reference.subplots);
    let differs = |u: Unit| match u {
        Unit::Layout => (corrupted.rows, corrupted.cols) != (reference.rows, reference.cols),
        Unit::Types => pairs().any(|(a, b)| a.chart_type != b.chart_type),
        Unit::Colors => pairs().any(|(a, b)| a.color != b.color),
        Unit::Titles => pairs().any(|(a, b)| a.title != b.title),
        Unit::Flags => pairs().any(|(a, b)| a.grid != b.grid || a.legend != b.legend),
        Unit::Data => pairs().any(|(a, b)| a.data != b.data),
    };
    let mut units: Vec<Unit> = [Unit::Layout, Unit::Types, Unit::Colors, Unit::Titles, Unit::Flags, Unit::Data]
        .into_iter()
        .filter(|&u| differs(u))
        .collect();
    let mut rng = seed::stream(&[tag::TEACHER, seed]);
    units.shuffle(&mut rng);
    let k = (strength.clamp(0.0, 1.0) * units.len() as f64).round() as usize;
    let mut chosen = units[..k].to_vec();
    // Report repairs in a fixed order regardless of the draw.
    chosen.sort_by_key(|u| *u as u8);

    let mut out = corrupted.clone();
    let mut repairs = Vec::new();
    for u in chosen {
        if u == Unit::Layout {
            out.rows = reference.rows;
            out.cols = reference.cols;
            repairs.push(Repair::Layout);
            continue;
        }
        for (sp, r) in out.subplots.iter_mut().zip(&reference.subplots) {
            let i = sp.index;
            match u {
                Unit::Types if sp.chart_type != r.chart_type => {
                    sp.chart_type = r.chart_type;
                    repairs.push(Repair::Type(i));
                }
                Unit::Colors if sp.color != r.color => {
                    sp.color = r.color;
                    repairs.push(Repair::Color(i));
                }
                Unit::Titles if sp.title != r.title => {
                    sp.title = r.title;
                    repairs.push(Repair::Title(i));
                }
                Unit::Flags => {
                    if sp.grid != r.grid {
                        sp.grid = r.grid;
                        repairs.push(Repair::Grid(i));
                    }
                    if sp.legend != r.legend {
                        sp.legend = r.legend;
                        repairs.push(Repair::Legend(i));
                    }
                }
                Unit::Data if sp.data != r.data => {
                    sp.data = r.data.clone();
                    repairs.push(Repair::Data(i));
                }
                _ => {}
            }
        }
    }
    (out, repairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScConfig {
    pub strength: f64,
    pub threshold: f64,
    /// Edits per corrupted first turn are drawn from `1..=max_edits`.
    pub max_edits: usize,
    pub seed: u64,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            strength: 0.8,
            threshold: 0.02,
            max_edits: 2,
            seed: 0,
        }
    }
}

/// One two-turn self-correction example.
#[derive(Debug, Clone, PartialEq)]
pub struct ScExample {
    pub task: Task,
    pub turn1: Turn,
    pub feedback: Feedback,
    pub turn2_response: Vec<Token>,
    pub r1: f64,
    pub r2: f64,
}

impl ScExample {
    /// Context of the second turn: task, first turn, feedback, `<GEN>`.
    pub fn turn2_context(&self) -> Vec<Token> {
        build_context(&self.task.reference, &[(self.turn1.body(), &self.feedback.tokens)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScRecord {
    pub task: u64,
    pub turn1_response: String,
    pub feedback: String,
    pub turn2_response: String,
    pub r1: f64,
    pub r2: f64,
}

impl From<&ScExample> for ScRecord {
    fn from(e: &ScExample) -> Self {
        ScRecord {
            task: e.task.id(),
            turn1_response: detokenize(&e.turn1.response),
            feedback: detokenize(&e.feedback.tokens),
            turn2_response: detokenize(&e.turn2_response),
            r1: e.r1,
            r2: e.r2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScDataset {
    pub examples: Vec<ScExample>,
    pub candidates: usize,
}

impl ScDataset {
    pub fn retention(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.examples.len() as f64 / self.candidates as f64
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for e in &self.examples {
            let line = serde_json::to_string(&ScRecord::from(e)).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The candidate built for one task, before filtering.
pub fn sc_candidate(task: &Task, cfg: &ScConfig) -> ScExample {
    let mut rng = seed::stream(&[tag::COLDSTART, cfg.seed, task.id()]);
    let edits = rng.gen_range(1..=cfg.max_edits.max(1));
    let corrupted = corrupt(&task.program, edits, seed::derive(&[cfg.seed, task.id()]));
    let scoring = Scoring::default();
    let turn1 = score_response(
        task_context(task),
        fenced_response(&[vocab::PLAN], &corrupted.serialize()),
        &task.reference,
        &scoring,
    );
    let feedback = build_feedback(&turn1);
    let (fixed, repairs) = teacher_correct(&corrupted, &task.program, cfg.strength, seed::derive(&[cfg.seed, task.id(), 1]));
    let think: Vec<Token> = repairs.iter().flat_map(|r| r.tokens()).collect();
    let turn2_response = fenced_response(&think, &fixed.serialize());
    let r1 = turn1.rewards.rule;
    let r2 = rule_reward(crate::chartlang::execute(&fixed).as_ref(), &task.reference).rule;
    ScExample {
        task: task.clone(),
        turn1,
        feedback,
        turn2_response,
        r1,
        r2,
    }
}

/// Corrupt → teacher repair → keep iff `r2 - r1 >= threshold`.
pub fn build_sc_data(tasks: &[Task], cfg: &ScConfig) -> ScDataset {
    assert!(cfg.threshold >= 0.0, "threshold must be non-negative");
    let examples: Vec<ScExample> = tasks
        .par_iter()
        .map(|t| sc_candidate(t, cfg))
        .filter(|e| e.r2 - e.r1 >= cfg.threshold)
        .collect();
    ScDataset {
        examples,
        candidates: tasks.len(),
    }
}

/// Behaviour cloning on second turns; the first turn and feedback are context only.
pub fn bc_train_multiturn(params: PolicyParams, data: &[ScExample], cfg: &SftConfig) -> Result<SftOutcome> {
    let examples: Vec<_> = data.iter().map(|e| (e.turn2_context(), e.turn2_response.clone())).collect();
    sft_train(params, &examples, cfg)
}

/// The whole cold start: single-turn cloning, correction data, second-turn cloning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdstartConfig {
    pub bc: SftConfig,
    pub sc: ScConfig,
    pub multiturn: SftConfig,
    pub init_seed: u64,
}

impl Default for ColdstartConfig {
    fn default() -> Self {
        // Two epochs at 3e-3 leave the policy far from the references; these
        // settings come from pilot runs on the default corpus.
        let sft = SftConfig {
            epochs: 10,
            lr: 1e-2,
            ..SftConfig::default()
        };
        ColdstartConfig {
            bc: sft.clone(),
            sc: ScConfig::default(),
            multiturn: sft,
            init_seed: 0,
        }
    }
}

impl SftConfig {
    fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ConfigError::invalid(format!("{prefix}.lr"), "must be a positive finite number"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::invalid(format!("{prefix}.batch_size"), "must be positive"));
        }
        Ok(())
    }
}

impl ColdstartConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bc.validate("coldstart.bc")?;
        self.multiturn.validate("coldstart.multiturn")?;
        if !(0.0..=1.0).contains(&self.sc.strength) {
            return Err(ConfigError::invalid("coldstart.sc.strength", "must be in [0, 1]"));
        }
        if !(self.sc.threshold.is_finite() && self.sc.threshold >= 0.0) {
            return Err(ConfigError::invalid("coldstart.sc.threshold", "must be >= 0"));
        }
        if self.sc.max_edits == 0 {
            return Err(ConfigError::invalid("coldstart.sc.max_edits", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ColdstartOutcome {
    pub params: PolicyParams,
    pub bc_losses: Vec<f64>,
    pub sc_data: ScDataset,
    pub multiturn_losses: Vec<f64>,
}

pub fn run_coldstart(tasks: &[Task], cfg: &ColdstartConfig) -> Result<ColdstartOutcome> {
    cfg.validate()?;
    let bc = bc_train(PolicyParams::init(cfg.init_seed), tasks, &cfg.bc)?;
    let sc_data = build_sc_data(tasks, &cfg.sc);
    let mt = bc_train_multiturn(bc.params, &sc_data.examples, &cfg.multiturn)?;
    Ok(ColdstartOutcome {
        params: mt.params,
        bc_losses: bc.losses,
        sc_data,
        multiturn_losses: mt.losses,
    })
}
