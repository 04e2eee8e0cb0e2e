mod common;

use chartloop::chartlang::{extract_code_block, run_code, tokenize, ChartProgram, Token};
use chartloop::coldstart::{
    bc_train, bc_train_multiturn, build_sc_data, sc_candidate, ColdstartConfig, sft_train, teacher_correct, ScConfig, ScRecord,
    SftConfig,
};
use chartloop::data::{corrupt, generate_split, Difficulty, DifficultyMix, Split, Task};
use chartloop::eval::canonical_code;
use chartloop::policy::{GradBuffer, PolicyParams};
use chartloop::rewards::rule_reward;
use chartloop::rollout::{infer_multi, rollout_shared_from, task_context, Sampling, Scoring};
use common::{central_diff, oracle_total, rel_err};

/// Rule reward of a logged response, recomputed from its text.
fn rule_of_response(task: &Task, response: &str) -> f64 {
    let toks = tokenize(response).unwrap();
    match extract_code_block(&toks) {
        Some(code) => rule_reward(run_code(code).as_ref(), &task.reference).rule,
        None => 0.0,
    }
}

fn rule_of(p: &ChartProgram, task: &Task) -> f64 {
    rule_reward(chartloop::chartlang::execute(p).as_ref(), &task.reference).rule
}

#[test]
fn every_kept_record_clears_the_threshold() {
    let tasks = generate_split(0, Split::Train, 2000, &DifficultyMix::default());
    let data = build_sc_data(&tasks, &ScConfig::default());
    assert!(!data.examples.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sc.jsonl");
    data.write(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut n = 0;
    for line in text.lines() {
        let rec: ScRecord = serde_json::from_str(line).unwrap();
        let task = tasks.iter().find(|t| t.id() == rec.task).unwrap();
        let r1 = rule_of_response(task, &rec.turn1_response);
        let r2 = rule_of_response(task, &rec.turn2_response);
        assert_eq!((r1, r2), (rec.r1, rec.r2));
        assert!(r2 - r1 >= 0.02, "task {}: {r1} -> {r2}", rec.task);
        n += 1;
    }
    assert_eq!(n, data.examples.len());
    // and the filter dropped exactly the candidates below the threshold
    let below = tasks
        .iter()
        .filter(|t| {
            let c = sc_candidate(t, &ScConfig::default());
            c.r2 - c.r1 < 0.02
        })
        .count();
    assert_eq!(below + n, tasks.len());
}

#[test]
fn threshold_zero_at_full_strength_keeps_everything() {
    let tasks = generate_split(3, Split::Train, 300, &DifficultyMix::default());
    let cfg = ScConfig {
        strength: 1.0,
        threshold: 0.0,
        ..Default::default()
    };
    let data = build_sc_data(&tasks, &cfg);
    assert_eq!(data.retention(), 1.0);
    assert!(data.examples.iter().all(|e| e.r2 == 1.0));
}

#[test]
fn teacher_properties_over_1000_cases() {
    for s in 0..1000u64 {
        let d = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard][(s % 3) as usize];
        let task = Task::generate(s * 7 + 1, d);
        let c = corrupt(&task.program, 1 + (s % 4) as usize, s);
        let (full, _) = teacher_correct(&c, &task.program, 1.0, s);
        assert_eq!(full.canonicalize(), task.program.canonicalize());
        let (none, _) = teacher_correct(&c, &task.program, 0.0, s);
        assert_eq!(none, c);
        let mut last = rule_of(&c, &task);
        for k in 0..=4 {
            let (p, _) = teacher_correct(&c, &task.program, k as f64 / 4.0, s);
            let r = rule_of(&p, &task);
            assert!(r >= last, "case {s} strength {k}: {r} < {last}");
            last = r;
        }
    }
}

fn overfit_pairs() -> Vec<(Vec<Token>, Vec<Token>)> {
    generate_split(5, Split::Train, 10, &DifficultyMix::default())
        .iter()
        .map(|t| (task_context(t), chartloop::coldstart::bc_target(t)))
        .collect()
}

#[test]
fn bc_overfits_ten_pairs() {
    let cfg = SftConfig {
        epochs: 100,
        batch_size: 10,
        lr: 1e-2,
        ..Default::default()
    };
    let out = sft_train(PolicyParams::init(0), &overfit_pairs(), &cfg).unwrap();
    assert_eq!(out.losses.len(), 100);
    for w in out.losses.windows(2) {
        assert!(w[1] <= w[0], "loss rose: {} -> {}", w[0], w[1]);
    }
    let pairs = overfit_pairs();
    let nll: f64 = pairs
        .iter()
        .map(|(c, t)| -out.params.logprob(c, t).unwrap().total / t.len() as f64)
        .sum::<f64>()
        / pairs.len() as f64;
    assert!(nll < 0.1, "final per-token NLL {nll}");
}

#[test]
fn multiturn_overfits_and_targets_only_the_second_turn() {
    let tasks = generate_split(6, Split::Train, 40, &DifficultyMix::default());
    let data = build_sc_data(&tasks, &ScConfig::default());
    let small: Vec<_> = data.examples.into_iter().take(10).collect();
    assert_eq!(small.len(), 10);

    // One example, one step: the recorded loss is the second-turn NLL alone.
    let p0 = PolicyParams::init(4);
    let one = &small[0];
    let ctx = one.turn2_context();
    let target = &one.turn2_response;
    let cfg1 = SftConfig {
        epochs: 1,
        batch_size: 1,
        max_steps: Some(1),
        ..Default::default()
    };
    let out = bc_train_multiturn(p0.clone(), std::slice::from_ref(one), &cfg1).unwrap();
    let n = target.len() as f64;
    let nll = -oracle_total(p0.as_slice(), &ctx, target) / n;
    assert!((out.losses[0] - nll).abs() < 1e-12);

    // Its gradient matches finite differences of that loss; first-turn tokens
    // enter only through the context.
    let mut g = GradBuffer::for_params(&p0);
    p0.accumulate_grad(&ctx, target, 1.0 / n, &mut g).unwrap();
    let loss = |q: &[f64]| oracle_total(q, &ctx, target) / n;
    let mut r = common::rng(11);
    for i in common::probe_indices(&mut r, &ctx, 6) {
        let fd = central_diff(p0.as_slice(), i, 1e-5, loss);
        assert!(rel_err(g.data[i], fd) < 1e-4, "param {i}: {} vs {fd}", g.data[i]);
    }
    let turn1_code = one.turn1.code.clone().unwrap();
    let with_turn1: Vec<Token> = turn1_code.iter().chain(target).copied().collect();
    let wrong = -oracle_total(p0.as_slice(), &ctx, &with_turn1) / with_turn1.len() as f64;
    assert!((out.losses[0] - wrong).abs() > 1e-6);

    let cfg = SftConfig {
        epochs: 500,
        batch_size: 10,
        lr: 3e-3,
        ..Default::default()
    };
    let fit = bc_train_multiturn(p0, &small, &cfg).unwrap();
    let nll: f64 = small
        .iter()
        .map(|e| -fit.params.logprob(&e.turn2_context(), &e.turn2_response).unwrap().total / e.turn2_response.len() as f64)
        .sum::<f64>()
        / small.len() as f64;
    assert!(nll < 0.1, "final per-token NLL {nll}");
}

#[test]
fn forced_unexecutable_first_turn_gives_error_feedback_to_every_member() {
    let task = Task::generate(12, Difficulty::Medium);
    let params = PolicyParams::init(0);
    let scoring = Scoring::default();
    let bad = tokenize("<THINK> plan </THINK> <CODE> LAYOUT 1 1 SUBPLOT 5 TYPE bar COLOR red DATA 1.0 END </CODE> <EOT>").unwrap();
    let first = chartloop::rollout::score_response(task_context(&task), bad, &task.reference, &scoring);
    assert!(!first.exec_ok());
    let env = chartloop::rollout::RolloutEnv {
        params: &params,
        sampling: &Sampling::default(),
        scoring: &scoring,
        seed: 0,
        step: 0,
    };
    let group = rollout_shared_from(&env, &task, 8, first);
    assert_eq!(group.trajectories.len(), 8);
    for t in &group.trajectories {
        assert!(t.turns[1].context.contains(&chartloop::chartlang::vocab::FB_ERR));
        assert!(t.turns[1].context.contains(&chartloop::chartlang::vocab::E_INDEX));
    }
}

/// Calibrated fixtures for the default cold start. The measured pilot values
/// sit next to each constant.
#[test]
fn calibrated_cold_start_fixtures() {
    let train = generate_split(0, Split::Train, 2000, &DifficultyMix::default());
    let held_out = generate_split(0, Split::Eval, 200, &DifficultyMix::default());
    let cfg = ColdstartConfig::default();
    let bc = bc_train(PolicyParams::init(cfg.init_seed), &train, &cfg.bc).unwrap();
    let scoring = Scoring::default();
    let good = held_out
        .iter()
        .filter(|t| infer_multi(&bc.params, t, 1, &Sampling::greedy(), &scoring, 0).turns[0].rewards.rule >= 0.8)
        .count() as f64
        / held_out.len() as f64;
    println!("bc: greedy rule >= 0.8 on {good:.3} of held-out tasks");
    assert!(good >= BC_FIXTURE, "{good} < {BC_FIXTURE}");

    let sc = build_sc_data(&train, &cfg.sc);
    let mt = bc_train_multiturn(bc.params, &sc.examples, &cfg.multiturn).unwrap();
    let cases = build_sc_data(&held_out, &ScConfig { seed: 99, threshold: 0.0, ..Default::default() });
    let differ = cases
        .examples
        .iter()
        .filter(|e| {
            let ctx = e.turn2_context();
            let resp = chartloop::rollout::run_turn(
                &mt.params,
                ctx,
                &e.task.reference,
                &Sampling::greedy(),
                &scoring,
                &mut chartloop::seed::stream(&[0]),
            );
            let first = canonical_code(e.turn1.code.as_deref().unwrap());
            resp.code.as_deref().map(canonical_code) != Some(first)
        })
        .count() as f64
        / cases.examples.len() as f64;
    println!("multiturn: second turn differs from the corrupted first turn on {differ:.3} of cases");
    assert!(differ > MT_DIFFER_FIXTURE, "{differ} <= {MT_DIFFER_FIXTURE}");
}

/// Pilot measured 0.080 for the default cold start on seed 0.
const BC_FIXTURE: f64 = 0.05;
/// Pilot measured 1.000.
const MT_DIFFER_FIXTURE: f64 = 0.9;
