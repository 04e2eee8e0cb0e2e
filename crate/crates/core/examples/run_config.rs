// Load a TOML run configuration, see a misspelled key rejected, and print
// the resolved echo that every command writes next to its outputs.

use chartloop::config::RunConfig;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let text = r#"
        lr = 3e-3
        group_size = 8

        [[stages]]
        strategy = "shared"
        max_steps = 100

        [[stages]]
        strategy = "full"
        eta = 0.1

        [coldstart]
        bc = { epochs = 10, lr = 1e-2 }
    "#;
    let mut cfg = RunConfig::from_toml_str(text)?;
    cfg.set_seed(7);
    print!("{}", cfg.to_toml());

    let err = RunConfig::from_toml_str("[[stages]]\nstrategy = \"full\"\netaa = 0.1").unwrap_err();
    println!("rejected: {err}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
