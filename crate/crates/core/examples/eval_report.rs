// Multi-turn evaluation report for a policy that copies the reference on
// its first turn and then keeps repeating itself.

use chartloop::chartlang::tokenize;
use chartloop::data::{generate_split, DifficultyMix, Split};
use chartloop::eval::{evaluate, EvalConfig, EvalReport, RepeatMode};
use chartloop::policy::PolicyParams;
use chartloop::rollout::{build_feedback, score_response, task_context, Scoring, Strategy, Trajectory};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = generate_split(0, Split::Eval, 20, &DifficultyMix::default());

    // an untrained policy, evaluated for three turns
    let (report, _) = evaluate(&PolicyParams::init(0), &tasks, &EvalConfig { turns: 3, ..EvalConfig::default() });
    print!("{}", report.to_table());

    // a hand-built reference copier
    let scoring = Scoring::default();
    let trajs: Vec<Trajectory> = tasks
        .iter()
        .map(|task| {
            let mut r = tokenize("<THINK> plan </THINK> <CODE>").unwrap();
            r.extend(task.program.serialize());
            r.extend(tokenize("</CODE> <EOT>").unwrap());
            let turn = score_response(task_context(task), r, &task.reference, &scoring);
            Trajectory {
                task_id: task.id(),
                strategy: Strategy::Infer,
                feedbacks: vec![build_feedback(&turn)],
                turns: vec![turn.clone(), turn],
                seed: 0,
            }
        })
        .collect();
    let copier = EvalReport::from_trajectories(&trajs, RepeatMode::Canonical);
    let tr = copier.first_transition().unwrap();
    println!(
        "copier: exec {:?}, avg improvement {:?}, repeated {:.2}",
        copier.exec_rate, tr.avg_improvement_both_exec, tr.repeated_code_rate
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
