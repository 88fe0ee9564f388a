use clap::Parser;

use contrastgan::cli::{apply_deterministic_env, run, Cli};

fn main() {
    apply_deterministic_env();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
