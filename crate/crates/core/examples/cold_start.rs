// A small cold start: behaviour cloning, filtered correction data, and
// second-turn cloning.

use chartloop::coldstart::{run_coldstart, ColdstartConfig, SftConfig};
use chartloop::data::{generate_split, DifficultyMix, Split};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tasks = generate_split(0, Split::Train, 120, &DifficultyMix::default());
    let sft = SftConfig {
        epochs: 3,
        lr: 1e-2,
        ..SftConfig::default()
    };
    let cfg = ColdstartConfig {
        bc: sft.clone(),
        multiturn: sft,
        ..ColdstartConfig::default()
    };
    let out = run_coldstart(&tasks, &cfg)?;
    println!(
        "bc loss {:.3} -> {:.3}",
        out.bc_losses[0],
        out.bc_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "kept {} of {} correction candidates ({:.2})",
        out.sc_data.examples.len(),
        out.sc_data.candidates,
        out.sc_data.retention()
    );
    if let Some(e) = out.sc_data.examples.first() {
        println!("first turn:  {}", chartloop::chartlang::detokenize(&e.turn1.response));
        println!("second turn: {}", chartloop::chartlang::detokenize(&e.turn2_response));
        println!("rule {:.3} -> {:.3}", e.r1, e.r2);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
