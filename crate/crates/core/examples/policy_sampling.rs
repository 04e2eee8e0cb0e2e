// The token policy: exact log-probabilities, sampling, and a gradient.

use chartloop::coldstart::bc_target;
use chartloop::data::{Difficulty, Task};
use chartloop::policy::{GradBuffer, PolicyParams};
use chartloop::rollout::task_context;
use chartloop::seed;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let params = PolicyParams::init(0);
    println!("{} parameters, dims {:?}", params.len(), params.dims());

    let task = Task::generate(3, Difficulty::Easy);
    let ctx = task_context(&task);
    let target = bc_target(&task);
    let lp = params.logprob(&ctx, &target)?;
    println!("log pi(reference response) = {:.3} over {} tokens", lp.total, target.len());

    let mut rng = seed::stream(&[42]);
    let s = params.sample(&ctx, 1.0, 24, &mut rng);
    println!("sampled: {}", chartloop::chartlang::detokenize(&s.tokens));
    let greedy = params.sample(&ctx, 0.0, 24, &mut rng);
    println!("greedy:  {}", chartloop::chartlang::detokenize(&greedy.tokens));

    let mut g = GradBuffer::for_params(&params);
    params.accumulate_grad(&ctx, &target, 1.0 / target.len() as f64, &mut g)?;
    println!("gradient norm of the mean log-prob: {:.4}", g.norm());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
