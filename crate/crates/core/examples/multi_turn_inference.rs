// Five turns of inference with interpreter feedback between them.

use chartloop::cli::format_trajectory;
use chartloop::data::{Difficulty, Task};
use chartloop::policy::PolicyParams;
use chartloop::rollout::{context_violations, infer_multi, Sampling, Scoring};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let params = PolicyParams::init(4);
    let task = Task::generate(30, Difficulty::Hard);
    let sampling = Sampling::default();
    let traj = infer_multi(&params, &task, 5, &sampling, &Scoring::default(), 0);
    print!("{}", format_trajectory(&task, &traj));
    assert_eq!((traj.turns.len(), traj.feedbacks.len()), (5, 4));
    assert_eq!(context_violations(&traj, &task.reference), 0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
