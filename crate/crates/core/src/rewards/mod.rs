//! Reward functions: the format check, the four rule-based element scores,
//! the rubric judge, their weighted composite, and the two-turn trajectory
//! reward with the improvement bonus.

pub mod judge;

use serde::{Deserialize, Serialize};

use crate::chartlang::{vocab, ElementSet, ExecError, Token};
use crate::color;
use crate::error::ConfigError;

pub use judge::{heuristic_judge, Judge, RemoteJudge, RubricScore, WireElementSet, WireReply};

/// Weights of the composite reward: `(1 - alpha - beta) * format + alpha * rule + beta * judge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl RewardWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ConfigError> {
        let w = RewardWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !in_unit(self.alpha) {
            return Err(ConfigError::invalid("alpha", "must lie in [0, 1]"));
        }
        if !in_unit(self.beta) {
            return Err(ConfigError::invalid("beta", "must lie in [0, 1]"));
        }
        if self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(ConfigError::invalid("beta", "alpha + beta must not exceed 1"));
        }
        Ok(())
    }

    pub fn format_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

impl Default for RewardWeights {
    /// Format 0.1, rule 0.9, judge 0.
    fn default() -> Self {
        RewardWeights { alpha: 0.9, beta: 0.0 }
    }
}

/// First-turn weight `gamma` and improvement-bonus weight `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajRewardParams {
    pub gamma: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleScores {
    pub text: f64,
    #[serde(rename = "type")]
    pub chart_type: f64,
    pub color: f64,
    pub layout: f64,
    pub rule: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub text: f64,
    #[serde(rename = "type")]
    pub chart_type: f64,
    pub color: f64,
    pub layout: f64,
    pub rule: f64,
    pub judge: f64,
    pub composite: f64,
}

impl RewardBreakdown {
    pub fn new(format: f64, rule: RuleScores, judge: f64, weights: &RewardWeights) -> Self {
        RewardBreakdown {
            format,
            text: rule.text,
            chart_type: rule.chart_type,
            color: rule.color,
            layout: rule.layout,
            rule: rule.rule,
            judge,
            composite: composite_reward(format, rule.rule, judge, weights),
        }
    }
}

fn is_fence(t: Token) -> bool {
    matches!(
        t,
        vocab::THINK_OPEN | vocab::THINK_CLOSE | vocab::CODE_OPEN | vocab::CODE_CLOSE
    )
}

/// 1 iff the response is exactly `<THINK> … </THINK> <CODE> … </CODE>`.
/// A single trailing `<EOT>` stop marker is ignored.
pub fn format_reward(response: &[Token]) -> f64 {
    let r = match response.split_last() {
        Some((&vocab::EOT, rest)) => rest,
        _ => response,
    };
    let ok = (|| {
        if r.first() != Some(&vocab::THINK_OPEN) || r.last() != Some(&vocab::CODE_CLOSE) {
            return false;
        }
        let close = match r.iter().position(|&t| t == vocab::THINK_CLOSE) {
            Some(k) => k,
            None => return false,
        };
        if r.get(close + 1) != Some(&vocab::CODE_OPEN) || close + 2 >= r.len() {
            return false;
        }
        let think = &r[1..close];
        let code = &r[close + 2..r.len() - 1];
        !think.iter().chain(code).any(|&t| is_fence(t) || t == vocab::EOT)
    })();
    if ok {
        1.0
    } else {
        0.0
    }
}

/// F1 between two multisets; both empty scores 1, exactly one empty scores 0.
pub fn multiset_f1<T: Ord + Clone>(pred: &[T], reference: &[T]) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut p = pred.to_vec();
    let mut r = reference.to_vec();
    p.sort();
    r.sort();
    let (mut i, mut j, mut matched) = (0, 0, 0usize);
    while i < p.len() && j < r.len() {
        match p[i].cmp(&r[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matched += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if matched == 0 {
        return 0.0;
    }
    let precision = matched as f64 / p.len() as f64;
    let recall = matched as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn text_score(pred: &ElementSet, reference: &ElementSet) -> f64 {
    multiset_f1(&pred.texts(), &reference.texts())
}

pub fn type_score(pred: &ElementSet, reference: &ElementSet) -> f64 {
    multiset_f1(&pred.types(), &reference.types())
}

/// Greedy colour matching in Lab space.
///
/// Repeatedly pairs the globally closest unmatched (pred, ref) colours, ties
/// going to the lowest pred then ref position. Each pair contributes
/// `max(0, 1 - ΔE76 / 100)`; the sum is normalized dice-style by
/// `(|pred| + |ref|) / 2`.
pub fn color_list_score(pred: &[[u8; 3]], reference: &[[u8; 3]]) -> f64 {
    if pred.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let dist: Vec<Vec<f64>> = pred
        .iter()
        .map(|&p| reference.iter().map(|&r| color::delta_e_rgb(p, r)).collect())
        .collect();
    let mut pred_used = vec![false; pred.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut total = 0.0;
    for _ in 0..pred.len().min(reference.len()) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, row) in dist.iter().enumerate().filter(|(i, _)| !pred_used[*i]) {
            for (j, &d) in row.iter().enumerate().filter(|(j, _)| !ref_used[*j]) {
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("unmatched pair exists");
        pred_used[i] = true;
        ref_used[j] = true;
        total += (1.0 - d / 100.0).max(0.0);
    }
    2.0 * total / (pred.len() + reference.len()) as f64
}

pub fn color_score(pred: &ElementSet, reference: &ElementSet) -> f64 {
    color_list_score(&pred.colors(), &reference.colors())
}

/// Half credit per matching dimension.
pub fn layout_score(pred: (u8, u8), reference: (u8, u8)) -> f64 {
    let rows = (pred.0 == reference.0) as u8 as f64;
    let cols = (pred.1 == reference.1) as u8 as f64;
    (rows + cols) / 2.0
}

/// The four element scores and their mean; an execution error scores zero everywhere.
pub fn rule_reward(pred: Result<&ElementSet, &ExecError>, reference: &ElementSet) -> RuleScores {
    let Ok(pred) = pred else {
        return RuleScores::default();
    };
    let text = text_score(pred, reference);
    let chart_type = type_score(pred, reference);
    let color = color_score(pred, reference);
    let layout = layout_score(pred.layout, reference.layout);
    RuleScores {
        text,
        chart_type,
        color,
        layout,
        rule: (text + chart_type + color + layout) / 4.0,
    }
}

pub fn composite_reward(format: f64, rule: f64, judge: f64, weights: &RewardWeights) -> f64 {
    weights.format_weight() * format + weights.alpha * rule + weights.beta * judge
}

/// `r2 + gamma * r1 + eta * [r2 > r1]`.
pub fn trajectory_reward(r1: f64, r2: f64, params: &TrajRewardParams) -> f64 {
    let boost = if r2 > r1 { 1.0 } else { 0.0 };
    r2 + params.gamma * r1 + params.eta * boost
}
