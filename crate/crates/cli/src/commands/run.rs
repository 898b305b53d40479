use density_softmax::checkpoint::{ModelContainer, StoredModel};
use density_softmax::metrics::write_bins_csv;
use density_softmax::predictor::train_pipeline;
use serde::Serialize;

use super::{create_dir, evaluate, load_config, output_dir, write_json};
use crate::cli::RunArgs;
use crate::config::build_sets;
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct Traces<'a> {
    erm: &'a [f64],
    reopt: &'a [f64],
}

/// Writes `model.json`, `training.json`, `reports/<set>.json` and
/// `bins/<set>.csv`.
pub fn run(args: &RunArgs) -> CliResult<()> {
    let cfg = load_config(args.config.path()?, args.seed)?;
    let out = output_dir(&args.out, Some(&cfg))?;
    let sets = build_sets(&cfg.dataset, cfg.seeds.data)?;
    let pipeline = cfg.pipeline();

    log::info!("training on {} samples", sets.train.len());
    let trained = train_pipeline(&sets.train, &pipeline)?;
    let container = ModelContainer::new(StoredModel::DensitySoftmax(trained.model), Some(pipeline));

    create_dir(&out)?;
    create_dir(&out.join("reports"))?;
    create_dir(&out.join("bins"))?;
    write_json(&out.join("model.json"), &container)?;
    write_json(
        &out.join("training.json"),
        &Traces {
            erm: &trained.erm_trace,
            reopt: &trained.reopt_trace,
        },
    )?;
    for report in evaluate(&container, &sets, &cfg.metrics)? {
        log::info!(
            "{}: accuracy {:.4} ece {:.4}",
            report.domain,
            report.accuracy,
            report.ece
        );
        write_json(&out.join("reports").join(format!("{}.json", report.domain)), &report)?;
        let path = out.join("bins").join(format!("{}.csv", report.domain));
        let file = std::fs::File::create(&path).map_err(CliError::io(&path))?;
        write_bins_csv(&report.bins, file)?;
    }
    println!("{}", out.display());
    Ok(())
}
