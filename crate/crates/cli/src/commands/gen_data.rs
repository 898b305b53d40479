use super::load_config;
use crate::cli::GenDataArgs;
use crate::config::build_sets;
use crate::error::CliResult;

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let cfg = load_config(args.config.path()?, args.seed)?;
    let sets = build_sets(&cfg.dataset, cfg.seeds.data)?;
    for path in sets.save_dir(&args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
