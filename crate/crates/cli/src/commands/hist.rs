use density_softmax::metrics::bin_index;
use serde::{Deserialize, Serialize};

use super::{create_dir, csv_error, csv_writer, load_model, non_empty, resolve_sets, wants, write_json, write_text};
use crate::cli::{Format, HistArgs};
use crate::error::{CliError, CliResult};
use crate::svg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistSeries {
    pub set: String,
    pub n: usize,
    pub mean: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistReport {
    /// Bin `m` covers `(edges[m], edges[m + 1]]`.
    pub edges: Vec<f64>,
    pub series: Vec<HistSeries>,
}

#[derive(Serialize)]
struct HistRow<'a> {
    set: &'a str,
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
    fraction: f64,
}

/// Writes `hist.csv`, `hist.json` and `hist.svg`.
pub fn hist_likelihood(args: &HistArgs) -> CliResult<HistReport> {
    if args.bins == 0 {
        return Err(CliError::Config("--bins must be at least 1".into()));
    }
    let sets = resolve_sets(&args.source)?;
    let container = load_model(&args.model)?;
    let mut series = Vec::new();
    for tag in &args.sets {
        let set = non_empty(sets.get(tag)?, "hist-likelihood")?;
        let s = container.model.scaled_likelihoods(&set.features)?.ok_or_else(|| {
            CliError::Runtime(format!("model {} has no density", container.model.kind()))
        })?;
        let mut counts = vec![0usize; args.bins];
        for v in &s {
            counts[bin_index(*v, args.bins) - 1] += 1;
        }
        series.push(HistSeries {
            set: tag.clone(),
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            counts,
        });
    }
    let edges: Vec<f64> = (0..=args.bins).map(|i| i as f64 / args.bins as f64).collect();
    let report = HistReport { edges, series };

    create_dir(&args.out)?;
    if wants(&args.format, Format::Csv) {
        let path = args.out.join("hist.csv");
        let mut w = csv_writer(&path)?;
        for s in &report.series {
            for (m, &count) in s.counts.iter().enumerate() {
                w.serialize(HistRow {
                    set: &s.set,
                    bin: m + 1,
                    lower: report.edges[m],
                    upper: report.edges[m + 1],
                    count,
                    fraction: count as f64 / s.n as f64,
                })
                .map_err(csv_error(&path))?;
            }
        }
        w.flush().map_err(CliError::io(&path))?;
    }
    if wants(&args.format, Format::Json) {
        write_json(&args.out.join("hist.json"), &report)?;
    }
    if wants(&args.format, Format::Svg) {
        let lines: Vec<(String, Vec<f64>)> = report
            .series
            .iter()
            .map(|s| {
                let f = s.counts.iter().map(|&c| c as f64 / s.n as f64).collect();
                (format!("{} (mean {:.3})", s.set, s.mean), f)
            })
            .collect();
        write_text(
            &args.out.join("hist.svg"),
            &svg::histogram("scaled likelihood per set", &report.edges, &lines),
        )?;
    }
    Ok(report)
}
