use density_softmax::metrics::{ece_from_bins, reliability_bins, write_bins_csv, BinStats};

use super::{create_dir, load_model, non_empty, resolve_sets, wants, write_json, write_text};
use crate::cli::{Format, ReliabilityArgs};
use crate::error::{CliError, CliResult};
use crate::svg;

/// Writes `reliability.csv`, `reliability.json` and `reliability.svg`.
pub fn reliability(args: &ReliabilityArgs) -> CliResult<Vec<BinStats>> {
    if args.bins == 0 {
        return Err(CliError::Config("--bins must be at least 1".into()));
    }
    let sets = resolve_sets(&args.source)?;
    let set = non_empty(sets.get(&args.set)?, "reliability")?;
    let container = load_model(&args.model)?;
    let probs = container.model.predict_proba(&set.features)?;
    let bins = reliability_bins(&probs, &set.labels, args.bins)?;
    let ece = ece_from_bins(&bins);

    create_dir(&args.out)?;
    if wants(&args.format, Format::Csv) {
        let path = args.out.join("reliability.csv");
        let file = std::fs::File::create(&path).map_err(CliError::io(&path))?;
        write_bins_csv(&bins, file)?;
    }
    if wants(&args.format, Format::Json) {
        write_json(&args.out.join("reliability.json"), &bins)?;
    }
    if wants(&args.format, Format::Svg) {
        let title = format!("{} on {} (ECE {:.4})", container.model.kind(), args.set, ece);
        write_text(&args.out.join("reliability.svg"), &svg::reliability(&title, &bins))?;
    }
    println!("ece {ece:.6}");
    Ok(bins)
}
