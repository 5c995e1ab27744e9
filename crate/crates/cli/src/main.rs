use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = relclass_cli::Cli::parse();
    if let Err(e) = relclass_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(relclass_cli::exit_code(&e));
    }
}
