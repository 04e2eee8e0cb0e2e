// Group-relative advantages and a single Adam step on a shared-first-turn group.

use chartloop::coldstart::{bc_train, SftConfig};
use chartloop::data::{generate_split, Difficulty, DifficultyMix, Split, Task};
use chartloop::grpo::{advantages, grad_group, opt_step, Adam, ADV_EPS};
use chartloop::policy::PolicyParams;
use chartloop::rollout::{rollout_shared, RolloutEnv, Sampling, Scoring};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    println!("advantages of [0.2, 0.5, 0.5, 0.9]: {:?}", advantages(&[0.2, 0.5, 0.5, 0.9], ADV_EPS));
    println!("advantages of a tied group: {:?}", advantages(&[0.4; 4], ADV_EPS));

    // a few epochs of cloning so that group members differ in reward
    let warm = generate_split(2, Split::Train, 200, &DifficultyMix::default());
    let sft = SftConfig {
        epochs: 8,
        lr: 1e-2,
        ..SftConfig::default()
    };
    let mut params = bc_train(PolicyParams::init(2), &warm, &sft)?.params;
    let task = Task::generate(21, Difficulty::Easy);
    let sampling = Sampling::default();
    let scoring = Scoring::default();
    let group = {
        let env = RolloutEnv {
            params: &params,
            sampling: &sampling,
            scoring: &scoring,
            seed: 3,
            step: 0,
        };
        rollout_shared(&env, &task, 8)
    };
    let mut grad = grad_group(&group, &params, ADV_EPS);
    grad.scale(1.0 / 8.0);
    println!("rewards {:?}, gradient norm {:.4}", group.rewards, grad.norm());

    let before = params.clone();
    let mut adam = Adam::new(params.len());
    opt_step(&mut params, &grad, &mut adam, 1e-3, 0)?;
    let moved = before.as_slice().iter().zip(params.as_slice()).filter(|(a, b)| a != b).count();
    println!("{moved} of {} parameters moved", params.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
