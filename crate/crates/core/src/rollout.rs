//! Multi-turn generation: contexts, turns, feedback, and group rollouts.
//!
//! A context is `<TASK>` + reference element tokens, then for every earlier
//! turn its response (without the stop token) and the feedback block, then
//! `<GEN>`. When that would exceed [`MAX_CONTEXT`], the oldest turn/feedback
//! pairs are dropped; the task block always stays.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chartlang::{
    detokenize, extract_code_block, run_code, tokenize, vocab, ElementSet, ExecError, Token,
};
use crate::data::Task;
use crate::policy::{PolicyParams, MAX_CONTEXT, MAX_TURN_LEN};
use crate::rewards::{heuristic_judge, Judge};
use crate::rewards::{format_reward, rule_reward, trajectory_reward, RewardBreakdown, RewardWeights, TrajRewardParams};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    pub max_turn_len: usize,
}

impl Sampling {
    pub fn greedy() -> Self {
        Sampling {
            temperature: 0.0,
            max_turn_len: MAX_TURN_LEN,
        }
    }
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 1.0,
            max_turn_len: MAX_TURN_LEN,
        }
    }
}

/// How turns are scored.
#[derive(Debug, Clone, Default)]
pub struct Scoring {
    pub weights: RewardWeights,
    pub judge: Judge,
}

impl Scoring {
    /// Format is always scored, rule and the heuristic judge are cheap and
    /// always reported; a configured remote judge is only consulted when the
    /// judge weight is nonzero.
    pub fn score(&self, response: &[Token], exec: Result<&ElementSet, &ExecError>, reference: &ElementSet) -> RewardBreakdown {
        let format = format_reward(response);
        let rule = rule_reward(exec, reference);
        let judge = if self.weights.beta > 0.0 {
            self.judge.score(exec, reference)
        } else {
            heuristic_judge(exec, reference).scaled()
        };
        RewardBreakdown::new(format, rule, judge, &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// The context this turn was sampled from; kept for gradients.
    pub context: Vec<Token>,
    pub response: Vec<Token>,
    pub code: Option<Vec<Token>>,
    pub exec: Result<ElementSet, ExecError>,
    pub rewards: RewardBreakdown,
}

impl Turn {
    pub fn exec_ok(&self) -> bool {
        self.exec.is_ok()
    }

    /// Response with one trailing `<EOT>` removed, as it appears in later contexts.
    pub fn body(&self) -> &[Token] {
        match self.response.split_last() {
            Some((&vocab::EOT, rest)) => rest,
            _ => &self.response,
        }
    }

    /// Tokens between `<THINK>` and `</THINK>`, when the response has them.
    pub fn think_len(&self) -> usize {
        let open = self.response.iter().position(|&t| t == vocab::THINK_OPEN);
        let close = self.response.iter().position(|&t| t == vocab::THINK_CLOSE);
        match (open, close) {
            (Some(o), Some(c)) if c > o => c - o - 1,
            _ => 0,
        }
    }

    pub fn code_len(&self) -> usize {
        self.code.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Rendered,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub tokens: Vec<Token>,
}

pub fn build_feedback(turn: &Turn) -> Feedback {
    match &turn.exec {
        Ok(elements) => {
            let mut tokens = vec![vocab::FB_OK];
            tokens.extend(elements.to_tokens());
            Feedback {
                kind: FeedbackKind::Rendered,
                tokens,
            }
        }
        Err(e) => Feedback {
            kind: FeedbackKind::Error,
            tokens: vec![vocab::FB_ERR, e.code.token()],
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Full,
    Shared,
    Single,
    /// Free-running multi-turn inference.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: u64,
    pub strategy: Strategy,
    pub turns: Vec<Turn>,
    pub feedbacks: Vec<Feedback>,
    /// Seed of this trajectory's sampling streams.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub task_id: u64,
    pub strategy: Strategy,
    pub trajectories: Vec<Trajectory>,
    pub shared_first: Option<Turn>,
    /// Scalar reward per member, the input to the advantages.
    pub rewards: Vec<f64>,
}

/// Task block: `<TASK>` followed by the reference's element tokens.
pub fn task_block(reference: &ElementSet) -> Vec<Token> {
    let mut out = vec![vocab::TASK];
    out.extend(reference.to_tokens());
    out
}

/// Builds the context for the next turn, dropping the oldest turn/feedback
/// pairs first when it would not fit.
pub fn build_context(reference: &ElementSet, history: &[(&[Token], &[Token])]) -> Vec<Token> {
    let task = task_block(reference);
    let pair_len = |p: &(&[Token], &[Token])| p.0.len() + p.1.len();
    let mut skip = 0;
    let mut total = task.len() + 1 + history.iter().map(pair_len).sum::<usize>();
    while total > MAX_CONTEXT && skip < history.len() {
        total -= pair_len(&history[skip]);
        skip += 1;
    }
    let mut ctx = Vec::with_capacity(total);
    ctx.extend(task);
    for (body, fb) in &history[skip..] {
        ctx.extend_from_slice(body);
        ctx.extend_from_slice(fb);
    }
    ctx.push(vocab::GEN);
    ctx
}

fn context_after(reference: &ElementSet, turns: &[Turn], feedbacks: &[Feedback]) -> Vec<Token> {
    let history: Vec<(&[Token], &[Token])> = turns
        .iter()
        .zip(feedbacks)
        .map(|(t, f)| (t.body(), f.tokens.as_slice()))
        .collect();
    build_context(reference, &history)
}

/// Executes and scores a response sampled for `context`.
pub fn score_response(context: Vec<Token>, response: Vec<Token>, reference: &ElementSet, scoring: &Scoring) -> Turn {
    let code = extract_code_block(&response).map(<[Token]>::to_vec);
    let exec = match &code {
        Some(c) => run_code(c),
        None => Err(ExecError::missing_code()),
    };
    let rewards = scoring.score(&response, exec.as_ref(), reference);
    Turn {
        context,
        response,
        code,
        exec,
        rewards,
    }
}

pub fn run_turn(
    params: &PolicyParams,
    context: Vec<Token>,
    reference: &ElementSet,
    sampling: &Sampling,
    scoring: &Scoring,
    rng: &mut seed::Rng,
) -> Turn {
    let sample = params.sample(&context, sampling.temperature, sampling.max_turn_len, rng);
    score_response(context, sample.tokens, reference, scoring)
}

/// Everything a rollout needs besides the task.
#[derive(Debug, Clone, Copy)]
pub struct RolloutEnv<'a> {
    pub params: &'a PolicyParams,
    pub sampling: &'a Sampling,
    pub scoring: &'a Scoring,
    pub seed: u64,
    pub step: u64,
}

impl RolloutEnv<'_> {
    fn member_seed(&self, task: u64, member: u64) -> u64 {
        seed::derive(&[tag::ROLLOUT, self.seed, task, member, self.step])
    }

    fn turn_rng(&self, task: u64, member: u64, turn: u64) -> seed::Rng {
        seed::stream(&[tag::ROLLOUT, self.seed, task, member, self.step, turn])
    }

    fn turn(&self, task: &Task, context: Vec<Token>, rng: &mut seed::Rng) -> Turn {
        run_turn(self.params, context, &task.reference, self.sampling, self.scoring, rng)
    }

    fn second_turn(&self, task: &Task, first: &Turn, rng: &mut seed::Rng) -> (Feedback, Turn) {
        let fb = build_feedback(first);
        let ctx = build_context(&task.reference, &[(first.body(), &fb.tokens)]);
        (fb, self.turn(task, ctx, rng))
    }
}

/// G independent two-turn trajectories; member reward is the trajectory reward.
pub fn rollout_full(env: &RolloutEnv, task: &Task, g: usize, traj: &TrajRewardParams) -> GroupRollout {
    assert!(g >= 2, "group size must be at least 2");
    let mut trajectories = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for i in 0..g as u64 {
        let first = env.turn(task, task_context(task), &mut env.turn_rng(task.id(), i, 0));
        let (fb, second) = env.second_turn(task, &first, &mut env.turn_rng(task.id(), i, 1));
        rewards.push(trajectory_reward(first.rewards.composite, second.rewards.composite, traj));
        trajectories.push(Trajectory {
            task_id: task.id(),
            strategy: Strategy::Full,
            turns: vec![first, second],
            feedbacks: vec![fb],
            seed: env.member_seed(task.id(), i),
        });
    }
    GroupRollout {
        task_id: task.id(),
        strategy: Strategy::Full,
        trajectories,
        shared_first: None,
        rewards,
    }
}

/// One first turn sampled online, G second turns branching from it.
pub fn rollout_shared(env: &RolloutEnv, task: &Task, g: usize) -> GroupRollout {
    let mut rng = seed::stream(&[tag::SHARED_FIRST, env.seed, task.id(), env.step]);
    let first = env.turn(task, task_context(task), &mut rng);
    rollout_shared_from(env, task, g, first)
}

/// Shared-first-turn group around a given first turn.
pub fn rollout_shared_from(env: &RolloutEnv, task: &Task, g: usize, first: Turn) -> GroupRollout {
    assert!(g >= 2, "group size must be at least 2");
    let mut trajectories = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for i in 0..g as u64 {
        let (fb, second) = env.second_turn(task, &first, &mut env.turn_rng(task.id(), i, 1));
        rewards.push(second.rewards.composite);
        trajectories.push(Trajectory {
            task_id: task.id(),
            strategy: Strategy::Shared,
            turns: vec![first.clone(), second],
            feedbacks: vec![fb],
            seed: env.member_seed(task.id(), i),
        });
    }
    GroupRollout {
        task_id: task.id(),
        strategy: Strategy::Shared,
        trajectories,
        shared_first: Some(first),
        rewards,
    }
}

/// G one-turn trajectories; member reward is the first-turn composite.
pub fn rollout_single(env: &RolloutEnv, task: &Task, g: usize) -> GroupRollout {
    assert!(g >= 2, "group size must be at least 2");
    let mut trajectories = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for i in 0..g as u64 {
        let first = env.turn(task, task_context(task), &mut env.turn_rng(task.id(), i, 0));
        rewards.push(first.rewards.composite);
        trajectories.push(Trajectory {
            task_id: task.id(),
            strategy: Strategy::Single,
            turns: vec![first],
            feedbacks: vec![],
            seed: env.member_seed(task.id(), i),
        });
    }
    GroupRollout {
        task_id: task.id(),
        strategy: Strategy::Single,
        trajectories,
        shared_first: None,
        rewards,
    }
}

/// Seeded coin per task: heads (probability `mix`) means single-turn.
pub fn turnwise_is_single(seed: u64, task_id: u64, step: u64, mix: f64) -> bool {
    seed::stream(&[tag::TURNWISE_COIN, seed, task_id, step]).gen::<f64>() < mix
}

pub fn rollout_turnwise(env: &RolloutEnv, tasks: &[Task], g: usize, mix: f64) -> Vec<GroupRollout> {
    assert!((0.0..=1.0).contains(&mix), "mix must be in [0, 1]");
    tasks
        .iter()
        .map(|t| {
            if turnwise_is_single(env.seed, t.id(), env.step, mix) {
                rollout_single(env, t, g)
            } else {
                rollout_shared(env, t, g)
            }
        })
        .collect()
}

pub fn task_context(task: &Task) -> Vec<Token> {
    build_context(&task.reference, &[])
}

/// Chains `turns` turns, each conditioned on all (retained) earlier turns and
/// feedback. Uses its own seed domain so it never aliases training streams.
pub fn infer_multi(
    params: &PolicyParams,
    task: &Task,
    turns: usize,
    sampling: &Sampling,
    scoring: &Scoring,
    seed: u64,
) -> Trajectory {
    assert!(turns >= 1, "need at least one turn");
    let mut out = Trajectory {
        task_id: task.id(),
        strategy: Strategy::Infer,
        turns: Vec::with_capacity(turns),
        feedbacks: Vec::with_capacity(turns - 1),
        seed: seed::derive(&[tag::EVAL, seed, task.id()]),
    };
    for t in 0..turns as u64 {
        if t > 0 {
            out.feedbacks.push(build_feedback(out.turns.last().expect("previous turn")));
        }
        let ctx = context_after(&task.reference, &out.turns, &out.feedbacks);
        let mut rng = seed::stream(&[tag::EVAL, seed, task.id(), t]);
        out.turns.push(run_turn(params, ctx, &task.reference, sampling, scoring, &mut rng));
    }
    out
}

/// Counts turns whose stored context differs from the one the protocol
/// prescribes (task block, retained history, `<GEN>`, size cap), or whose
/// feedback does not match its turn.
pub fn context_violations(traj: &Trajectory, reference: &ElementSet) -> usize {
    let mut bad = 0;
    if traj.feedbacks.len() + 1 != traj.turns.len() {
        bad += 1;
    }
    for (t, turn) in traj.turns.iter().enumerate() {
        let fbs = &traj.feedbacks[..t.min(traj.feedbacks.len())];
        let expected = context_after(reference, &traj.turns[..fbs.len()], fbs);
        let fb_ok = fbs.iter().zip(&traj.turns).all(|(f, tr)| *f == build_feedback(tr));
        if turn.context != expected || turn.context.len() > MAX_CONTEXT || !fb_ok {
            bad += 1;
        }
    }
    bad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecRecord {
    Ok(ElementSet),
    Error(ExecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub response: String,
    pub code: Option<String>,
    pub exec: ExecRecord,
    pub rewards: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub kind: FeedbackKind,
    pub tokens: String,
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: u64,
    pub strategy: Strategy,
    pub turns: Vec<TurnRecord>,
    pub feedbacks: Vec<FeedbackRecord>,
    pub seed: u64,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            task_id: t.task_id,
            strategy: t.strategy,
            turns: t
                .turns
                .iter()
                .map(|turn| TurnRecord {
                    response: detokenize(&turn.response),
                    code: turn.code.as_deref().map(detokenize),
                    exec: match &turn.exec {
                        Ok(e) => ExecRecord::Ok(e.clone()),
                        Err(e) => ExecRecord::Error(e.clone()),
                    },
                    rewards: turn.rewards,
                })
                .collect(),
            feedbacks: t
                .feedbacks
                .iter()
                .map(|f| FeedbackRecord {
                    kind: f.kind,
                    tokens: detokenize(&f.tokens),
                })
                .collect(),
            seed: t.seed,
        }
    }
}

impl TrajectoryRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory record serializes")
    }

    pub fn response_tokens(&self, turn: usize) -> Vec<Token> {
        tokenize(&self.turns[turn].response).expect("logged responses use the vocabulary")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartlang::ErrorCode;
    use crate::data::Difficulty;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s).unwrap()
    }

    fn fenced(task: &Task) -> Vec<Token> {
        let mut r = toks("<THINK> plan </THINK> <CODE>");
        r.extend(task.program.serialize());
        r.extend(toks("</CODE> <EOT>"));
        r
    }

    #[test]
    fn missing_code_block_is_a_parse_error() {
        let task = Task::generate(1, Difficulty::Easy);
        let turn = score_response(task_context(&task), toks("plan <EOT>"), &task.reference, &Scoring::default());
        assert_eq!(turn.exec.as_ref().unwrap_err().code, ErrorCode::Parse);
        assert_eq!(turn.rewards.rule, 0.0);
        assert_eq!(turn.rewards.format, 0.0);
    }

    #[test]
    fn exact_reference_scores_one_under_any_weights() {
        let task = Task::generate(3, Difficulty::Hard);
        for (a, b) in [(0.9, 0.0), (0.45, 0.45), (0.0, 1.0), (1.0, 0.0)] {
            let scoring = Scoring {
                weights: RewardWeights::new(a, b).unwrap(),
                judge: Judge::Heuristic,
            };
            let turn = score_response(task_context(&task), fenced(&task), &task.reference, &scoring);
            assert_eq!(turn.rewards.composite, 1.0);
        }
    }

    #[test]
    fn feedback_frames_elements_or_error_code() {
        let task = Task::generate(5, Difficulty::Easy);
        let ok = score_response(task_context(&task), fenced(&task), &task.reference, &Scoring::default());
        let fb = build_feedback(&ok);
        assert_eq!(fb.kind, FeedbackKind::Rendered);
        assert_eq!(fb.tokens[0], vocab::FB_OK);
        assert_eq!(&fb.tokens[1..], task.reference.to_tokens().as_slice());

        let bad = toks("<THINK> </THINK> <CODE> LAYOUT 1 1 SUBPLOT 4 TYPE bar COLOR red DATA 1.0 END </CODE> <EOT>");
        let err = score_response(task_context(&task), bad, &task.reference, &Scoring::default());
        assert_eq!(build_feedback(&err).tokens, toks("<FB_ERR> E_INDEX"));
        assert_eq!(build_feedback(&err), build_feedback(&err.clone()));
    }

    #[test]
    fn second_turn_context_layout() {
        let task = Task::generate(9, Difficulty::Medium);
        let params = PolicyParams::init(2);
        let sampling = Sampling {
            temperature: 1.0,
            max_turn_len: 20,
        };
        let tr = infer_multi(&params, &task, 2, &sampling, &Scoring::default(), 4);
        let mut expected = task_block(&task.reference);
        expected.extend_from_slice(tr.turns[0].body());
        expected.extend_from_slice(&tr.feedbacks[0].tokens);
        expected.push(vocab::GEN);
        assert_eq!(tr.turns[1].context, expected);
        assert_eq!(context_violations(&tr, &task.reference), 0);
    }

    #[test]
    fn long_histories_drop_the_oldest_pair() {
        let task = Task::generate(2, Difficulty::Easy);
        let long = vec![vocab::PLAN; 200];
        let fb = [vocab::FB_ERR, vocab::E_PARSE];
        let a: &[Token] = &long;
        let ctx = build_context(&task.reference, &[(&[vocab::FIX], &fb), (a, &fb), (a, &fb), (a, &fb)]);
        assert!(ctx.len() <= MAX_CONTEXT);
        let tb = task_block(&task.reference);
        assert_eq!(&ctx[..tb.len()], tb.as_slice());
        assert!(!ctx.contains(&vocab::FIX));
        assert_eq!(*ctx.last().unwrap(), vocab::GEN);
    }

    #[test]
    fn shared_groups_share_the_first_turn() {
        let task = Task::generate(11, Difficulty::Medium);
        let params = PolicyParams::init(1);
        let sampling = Sampling {
            temperature: 1.0,
            max_turn_len: 24,
        };
        let scoring = Scoring::default();
        let env = RolloutEnv {
            params: &params,
            sampling: &sampling,
            scoring: &scoring,
            seed: 3,
            step: 0,
        };
        let g = rollout_shared(&env, &task, 4);
        let first = g.shared_first.as_ref().unwrap();
        assert!(g.trajectories.iter().all(|t| &t.turns[0] == first));
        for (t, r) in g.trajectories.iter().zip(&g.rewards) {
            assert_eq!(*r, t.turns[1].rewards.composite);
        }
        assert_eq!(g, rollout_shared(&env, &task, 4));
    }

    #[test]
    fn full_rewards_collapse_to_second_turn_without_bonus() {
        let task = Task::generate(12, Difficulty::Easy);
        let params = PolicyParams::init(1);
        let sampling = Sampling {
            temperature: 1.0,
            max_turn_len: 24,
        };
        let scoring = Scoring::default();
        let env = RolloutEnv {
            params: &params,
            sampling: &sampling,
            scoring: &scoring,
            seed: 3,
            step: 5,
        };
        let g = rollout_full(&env, &task, 8, &TrajRewardParams::default());
        for (t, r) in g.trajectories.iter().zip(&g.rewards) {
            assert_eq!(*r, t.turns[1].rewards.composite);
        }
        let firsts: std::collections::HashSet<_> = g.trajectories.iter().map(|t| t.turns[0].response.clone()).collect();
        assert!(firsts.len() > 1, "members draw from distinct streams");
    }

    #[test]
    fn turnwise_mix_extremes() {
        assert!((0..200).all(|t| !turnwise_is_single(1, t, 0, 0.0)));
        assert!((0..200).all(|t| turnwise_is_single(1, t, 0, 1.0)));
    }

    #[test]
    fn records_round_trip_through_json() {
        let task = Task::generate(21, Difficulty::Hard);
        let params = PolicyParams::init(9);
        let tr = infer_multi(&params, &task, 3, &Sampling::default(), &Scoring::default(), 0);
        let rec = TrajectoryRecord::from(&tr);
        let back: TrajectoryRecord = serde_json::from_str(&rec.to_json_line()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.response_tokens(2), tr.turns[2].response);
    }
}
