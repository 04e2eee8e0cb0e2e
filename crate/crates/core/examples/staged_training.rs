// A short two-stage GRPO run: shared-first-turn, then full-trajectory.

use chartloop::data::{generate_split, DifficultyMix, Split};
use chartloop::grpo::{train, StageConfig, TrainConfig, TrainSinks};
use chartloop::policy::PolicyParams;
use chartloop::rollout::Scoring;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = generate_split(1, Split::Train, 32, &DifficultyMix::default());
    let held_out = generate_split(1, Split::Eval, 16, &DifficultyMix::default());
    let cfg = TrainConfig {
        stages: vec![
            StageConfig {
                max_steps: Some(3),
                ..StageConfig::shared()
            },
            StageConfig {
                max_steps: Some(3),
                ..StageConfig::full(0.0, 0.0)
            },
        ],
        group_size: 4,
        batch_size: 8,
        eval_every: 3,
        ..TrainConfig::default()
    };
    let mut metrics = Vec::new();
    let mut sinks = TrainSinks {
        metrics: Some(&mut metrics),
        ..TrainSinks::default()
    };
    let out = train(&cfg, PolicyParams::init(0), &tasks, &held_out, &Scoring::default(), &mut sinks)?;
    print!("{}", String::from_utf8_lossy(&metrics));
    for e in &out.evals {
        println!("step {} held-out turn-1 rule {:.3}", e.step, e.report.mean_rule[0]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
