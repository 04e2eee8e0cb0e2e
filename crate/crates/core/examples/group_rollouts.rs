// One group per rollout strategy: full trajectory, shared first turn, single turn.

use chartloop::data::{Difficulty, Task};
use chartloop::policy::PolicyParams;
use chartloop::rewards::TrajRewardParams;
use chartloop::rollout::{rollout_full, rollout_shared, rollout_single, RolloutEnv, Sampling, Scoring};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let params = PolicyParams::init(1);
    let task = Task::generate(8, Difficulty::Medium);
    let sampling = Sampling::default();
    let scoring = Scoring::default();
    let env = RolloutEnv {
        params: &params,
        sampling: &sampling,
        scoring: &scoring,
        seed: 0,
        step: 0,
    };
    let groups = [
        rollout_full(&env, &task, 4, &TrajRewardParams { gamma: 0.0, eta: 0.1 }),
        rollout_shared(&env, &task, 4),
        rollout_single(&env, &task, 4),
    ];
    for g in &groups {
        let turns: Vec<usize> = g.trajectories.iter().map(|t| t.turns.len()).collect();
        println!("{:?}: turns {turns:?}, rewards {:?}", g.strategy, g.rewards);
    }
    // members of a shared group all condition on the same first turn
    let shared = &groups[1];
    assert!(shared.trajectories.windows(2).all(|w| w[0].turns[0] == w[1].turns[0]));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
