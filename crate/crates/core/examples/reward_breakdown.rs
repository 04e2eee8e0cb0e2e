// Score a prediction against a reference: rule sub-scores, judge, composite,
// and the two-turn trajectory reward.

use chartloop::chartlang::{run_code, tokenize, ExecError};
use chartloop::rewards::{heuristic_judge, trajectory_reward, RewardWeights, TrajRewardParams};
use chartloop::rollout::Scoring;
use chartloop::rewards::Judge;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let reference = run_code(&tokenize(
        "LAYOUT 1 2 SUBPLOT 0 TYPE bar COLOR red TITLE sales DATA 1.0 2.0 END SUBPLOT 1 TYPE pie COLOR navy DATA 3.0 END",
    )?)?;
    let response = tokenize(
        "<THINK> plan </THINK> <CODE> LAYOUT 1 2 SUBPLOT 0 TYPE line COLOR red DATA 1.0 END \
         SUBPLOT 1 TYPE pie COLOR cyan DATA 3.0 END </CODE> <EOT>",
    )?;
    let pred = run_code(chartloop::chartlang::extract_code_block(&response).unwrap())?;

    for (alpha, beta) in [(0.9, 0.0), (0.8, 0.1), (0.0, 0.9)] {
        let scoring = Scoring {
            weights: RewardWeights::new(alpha, beta)?,
            judge: Judge::Heuristic,
        };
        let b = scoring.score(&response, Ok(&pred), &reference);
        println!(
            "alpha {alpha} beta {beta}: text {:.3} type {:.3} color {:.3} layout {:.3} rule {:.3} judge {:.3} -> {:.4}",
            b.text, b.chart_type, b.color, b.layout, b.rule, b.judge, b.composite
        );
    }

    let rubric = heuristic_judge(Ok(&pred), &reference);
    println!("rubric {rubric:?}");
    let err = ExecError::no_data(0);
    println!("an execution error scores {}", heuristic_judge(Err(&err), &reference).scaled());

    let p = TrajRewardParams { gamma: 0.5, eta: 0.1 };
    println!("trajectory reward r1 0.8, r2 0.9: {:.2}", trajectory_reward(0.8, 0.9, &p));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
