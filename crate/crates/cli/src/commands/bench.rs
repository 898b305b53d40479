use std::fmt::Write;
use std::hint::black_box;
use std::time::Instant;

use density_softmax::checkpoint::ModelContainer;
use density_softmax::numeric::Matrix;
use serde::{Deserialize, Serialize};

use super::{create_dir, load_model, non_empty, resolve_sets, wants, write_json};
use crate::cli::{BenchArgs, Format};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub model: String,
    pub kind: String,
    pub param_count: usize,
    pub median_ms: f64,
    pub p25_ms: f64,
    pub p75_ms: f64,
    pub iqr_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub set: String,
    pub warmup: usize,
    pub reps: usize,
    pub entries: Vec<BenchEntry>,
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Consecutive timed calls per model before moving to the next one.
pub const BLOCK: usize = 50;
/// Untimed calls at the start of each block, so a model's weights are back
/// in cache after the others ran.
const REWARM: usize = 5;

/// Per-sample wall time in milliseconds, one row per call, cycling over
/// `rows`. Models take turns in blocks of [`BLOCK`] calls so slow drift in
/// machine speed hits every model alike.
pub fn time_single_samples(
    models: &[ModelContainer],
    rows: &[Matrix],
    warmup: usize,
    reps: usize,
) -> CliResult<Vec<Vec<f64>>> {
    for model in models {
        for i in 0..warmup {
            black_box(model.model.predict_proba(&rows[i % rows.len()])?);
        }
    }
    let mut times = vec![Vec::with_capacity(reps); models.len()];
    let mut done = 0;
    while done < reps {
        let n = BLOCK.min(reps - done);
        for (model, times) in models.iter().zip(&mut times) {
            for i in 0..REWARM {
                black_box(model.model.predict_proba(&rows[(done + i) % rows.len()])?);
            }
            for i in done..done + n {
                let x = &rows[i % rows.len()];
                let t = Instant::now();
                let p = model.model.predict_proba(x)?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
                black_box(p);
            }
        }
        done += n;
    }
    Ok(times)
}

fn table(report: &BenchReport) -> String {
    let mut s = format!(
        "{:<40} {:<16} {:>10} {:>12} {:>12} {:>8}\n",
        "model", "kind", "params", "median ms", "iqr ms", "ratio"
    );
    let base = report.entries.first().map_or(1.0, |e| e.median_ms);
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{:<40} {:<16} {:>10} {:>12.5} {:>12.5} {:>8.3}",
            e.model,
            e.kind,
            e.param_count,
            e.median_ms,
            e.iqr_ms,
            e.median_ms / base
        );
    }
    s
}

/// Times single-sample prediction for each model on the same rows, on the
/// calling thread.
pub fn bench(args: &BenchArgs) -> CliResult<BenchReport> {
    if args.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let sets = resolve_sets(&args.source)?;
    let set = non_empty(sets.get(&args.set)?, "bench")?;
    let rows: Vec<Matrix> = set
        .features
        .row_iter()
        .map(|r| Matrix::row_vector(r.to_vec()))
        .collect();
    let containers = args.models.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
    let times = time_single_samples(&containers, &rows, args.warmup, args.reps)?;
    let mut entries = Vec::new();
    for ((path, container), mut times) in args.models.iter().zip(&containers).zip(times) {
        times.sort_by(f64::total_cmp);
        let (p25, p75) = (quantile(&times, 0.25), quantile(&times, 0.75));
        entries.push(BenchEntry {
            model: path.display().to_string(),
            kind: container.model.kind().to_string(),
            param_count: container.model.param_count(),
            median_ms: quantile(&times, 0.5),
            p25_ms: p25,
            p75_ms: p75,
            iqr_ms: p75 - p25,
        });
    }
    let report = BenchReport {
        set: args.set.clone(),
        warmup: args.warmup,
        reps: args.reps,
        entries,
    };
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("bench.json"), &report)?;
    }
    if !args.format.is_empty() && wants(&args.format, Format::Json) {
        let text = serde_json::to_string_pretty(&report).map_err(density_softmax::Error::from)?;
        println!("{text}");
    } else {
        print!("{}", table(&report));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
    }
}
