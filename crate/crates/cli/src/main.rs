use clap::Parser;
use ds_cli::cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DS_LOG", "warn")).init();
    let cli = Cli::parse();
    std::process::exit(ds_cli::execute(&cli));
}
