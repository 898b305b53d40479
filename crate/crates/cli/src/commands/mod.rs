mod bench;
mod compare;
mod gen_data;
mod hist;
mod reliability;
mod run;
mod surface;

pub use bench::{bench, BenchEntry, BenchReport};
pub use compare::{compare, CompareReport, CompareRow};
pub use gen_data::gen_data;
pub use hist::{hist_likelihood, HistReport, HistSeries};
pub use reliability::reliability;
pub use run::run;
pub use surface::{surface, SurfaceCell};

use std::fs;
use std::path::{Path, PathBuf};

use density_softmax::checkpoint::ModelContainer;
use density_softmax::data::LabeledSet;
use density_softmax::metrics::{EvalReport, MetricConfig};
use serde::Serialize;

use crate::cli::{Format, SetArgs};
use crate::config::{build_sets, DataSets, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub(crate) fn wants(formats: &[Format], f: Format) -> bool {
    formats.is_empty() || formats.contains(&f)
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(density_softmax::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub(crate) fn load_model(path: &Path) -> CliResult<ModelContainer> {
    log::info!("loading model {}", path.display());
    Ok(ModelContainer::load(path)?)
}

/// Applies `--seed` to both seed streams.
pub(crate) fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds.data = s;
        cfg.seeds.model = s;
    }
    Ok(cfg)
}

/// Sets come from a `gen-data` directory or are regenerated from a config.
pub(crate) fn resolve_sets(args: &SetArgs) -> CliResult<DataSets> {
    match (&args.data, &args.config) {
        (Some(dir), None) => DataSets::load_dir(dir),
        (None, Some(path)) => {
            let cfg = load_config(path, args.seed)?;
            build_sets(&cfg.dataset, cfg.seeds.data)
        }
        (Some(_), Some(_)) => Err(CliError::Config("pass either --data or --config, not both".into())),
        (None, None) => Err(CliError::Config("one of --data or --config is required".into())),
    }
}

pub(crate) fn output_dir(flag: &Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .ok_or_else(|| CliError::Config("output_dir: not set in the config and no --out given".into()))
}

/// Metrics for every labelled set; the iid test report also carries OOD
/// detection scores when an OOD set exists.
pub(crate) fn evaluate(
    model: &ModelContainer,
    sets: &DataSets,
    metrics: &MetricConfig,
) -> CliResult<Vec<EvalReport>> {
    let m = &model.model;
    let ood = match &sets.ood {
        Some(o) => Some((m.predict_proba(&o.features)?, m.scaled_likelihoods(&o.features)?)),
        None => None,
    };
    let mut reports = Vec::new();
    for set in sets.labeled() {
        let probs = m.predict_proba(&set.features)?;
        let lik = m.scaled_likelihoods(&set.features)?;
        let mut report = EvalReport::compute(
            &set.domain.tag(),
            &probs,
            &set.labels,
            lik.as_deref(),
            m.param_count(),
            metrics,
        )?;
        if let (Some((op, ol)), density_softmax::data::Domain::IidTest) = (&ood, set.domain) {
            report = report.with_ood((&probs, lik.as_deref()), (op, ol.as_deref()))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

pub(crate) fn non_empty<'a>(set: &'a LabeledSet, what: &str) -> CliResult<&'a LabeledSet> {
    if set.is_empty() {
        return Err(CliError::Runtime(format!("{what}: set `{}` is empty", set.domain)));
    }
    Ok(set)
}
