use clap::Parser;

fn main() {
    let cli = chartloop::cli::Cli::parse();
    if let Err(e) = chartloop::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(chartloop::cli::exit_code(&e));
    }
}
