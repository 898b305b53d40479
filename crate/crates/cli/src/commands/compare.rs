use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::Path;

use density_softmax::checkpoint::{ModelContainer, StoredModel};
use density_softmax::metrics::EvalReport;
use density_softmax::model::ensemble_train;
use density_softmax::predictor::{train_pipeline, DensitySoftmaxModel};
use serde::{Deserialize, Serialize};

use super::{create_dir, evaluate, load_config, output_dir, write_json, write_text};
use crate::cli::CompareArgs;
use crate::config::build_sets;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub experiment: String,
    /// `erm`, `density_softmax`, `density_softmax_erm_classifier` or
    /// `ensemble`.
    pub model: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

fn experiment_name(path: &Path, taken: &mut BTreeSet<String>) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let mut name = stem.clone();
    let mut k = 2;
    while !taken.insert(name.clone()) {
        name = format!("{stem}_{k}");
        k += 1;
    }
    name
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn markdown(rows: &[CompareRow]) -> String {
    let mut s = String::from(
        "| experiment | model | domain | n | accuracy | nll | ece | mece | brier | mean entropy | mean likelihood | auroc (max-prob) | aupr (max-prob) | auroc (likelihood) | aupr (likelihood) | params | latency ms |\n",
    );
    s.push_str(&"|---".repeat(17));
    s.push_str("|\n");
    for r in rows {
        let e = &r.report;
        let mp = e.ood.map(|o| o.max_prob);
        let lk = e.ood.and_then(|o| o.likelihood);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {:.4} | {:.4} | {} | {} | {} | {} | {} | {} | {} |",
            r.experiment,
            r.model,
            e.domain,
            e.n,
            e.accuracy,
            e.nll,
            e.ece,
            fmt_opt(e.mece),
            e.brier,
            e.mean_entropy,
            fmt_opt(e.mean_scaled_likelihood),
            fmt_opt(mp.map(|d| d.auroc)),
            fmt_opt(mp.map(|d| d.aupr)),
            fmt_opt(lk.map(|d| d.auroc)),
            fmt_opt(lk.map(|d| d.aupr)),
            e.param_count,
            fmt_opt(e.latency_ms_per_sample),
        );
    }
    s
}

/// Per experiment, writes `<name>/{erm,density_softmax,ensemble}.json`;
/// the table goes to `compare.json` and `compare.md`.
pub fn compare(args: &CompareArgs) -> CliResult<CompareReport> {
    let mut rows = Vec::new();
    let mut taken = BTreeSet::new();
    let mut out_dir = None;
    for path in &args.configs {
        let cfg = load_config(path, args.seed)?;
        if out_dir.is_none() {
            out_dir = Some(output_dir(&args.out, Some(&cfg))?);
        }
        let out = out_dir.as_ref().expect("set above");
        let name = experiment_name(path, &mut taken);
        let sets = build_sets(&cfg.dataset, cfg.seeds.data)?;
        let pipeline = cfg.pipeline();

        log::info!("{name}: density-softmax pipeline");
        let trained = train_pipeline(&sets.train, &pipeline)?;
        let shared = DensitySoftmaxModel::new(
            trained.erm.encoder.clone(),
            trained.erm.classifier.clone(),
            trained.model.density().clone(),
        )?;
        log::info!("{name}: ensemble of {}", cfg.ensemble_members);
        let ensemble = ensemble_train(
            cfg.ensemble_members,
            &pipeline.encoder,
            sets.train.num_classes(),
            &pipeline.train,
            &sets.train,
            pipeline.init_seed,
        )?;

        let dir = out.join(&name);
        create_dir(&dir)?;
        let models = [
            ("erm", StoredModel::Erm(trained.erm), true),
            ("density_softmax", StoredModel::DensitySoftmax(trained.model), true),
            ("density_softmax_erm_classifier", StoredModel::DensitySoftmax(shared), false),
            ("ensemble", StoredModel::Ensemble(ensemble), true),
        ];
        for (label, model, save) in models {
            let container = ModelContainer::new(model, Some(pipeline.clone()));
            if save {
                write_json(&dir.join(format!("{label}.json")), &container)?;
            }
            for report in evaluate(&container, &sets, &cfg.metrics)? {
                rows.push(CompareRow {
                    experiment: name.clone(),
                    model: label.to_string(),
                    report,
                });
            }
        }
    }
    let report = CompareReport { rows };
    if let Some(out) = out_dir {
        write_json(&out.join("compare.json"), &report)?;
        write_text(&out.join("compare.md"), &markdown(&report.rows))?;
        println!("{}", out.display());
    }
    Ok(report)
}
