use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = pmls::cli::Cli::parse();
    std::process::exit(pmls::cli::main_with(cli));
}
