use density_softmax::numeric::Matrix;
use density_softmax::predictor::binary_summary;
use serde::Serialize;

use super::{create_dir, csv_error, csv_writer, load_model, wants, write_text};
use crate::cli::{Format, SurfaceArgs};
use crate::error::{CliError, CliResult};
use crate::svg;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceCell {
    pub x0: f64,
    pub x1: f64,
    pub p0: f64,
    pub entropy_bits: f64,
    pub variance: f64,
    pub u: f64,
    /// Empty for models without a density.
    pub scaled_likelihood: Option<f64>,
}

/// Cell centers, row-major with `x1` increasing by row.
fn grid(bounds: [f64; 4], res: usize) -> Vec<[f64; 2]> {
    let dx = (bounds[1] - bounds[0]) / res as f64;
    let dy = (bounds[3] - bounds[2]) / res as f64;
    (0..res)
        .flat_map(|r| {
            (0..res).map(move |c| {
                [
                    bounds[0] + (c as f64 + 0.5) * dx,
                    bounds[2] + (r as f64 + 0.5) * dy,
                ]
            })
        })
        .collect()
}

/// Writes `surface.csv` and one heatmap per quantity.
pub fn surface(args: &SurfaceArgs) -> CliResult<Vec<SurfaceCell>> {
    let bounds: [f64; 4] = args
        .bounds
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Config("--bounds takes xmin,xmax,ymin,ymax".into()))?;
    if !(bounds[0] < bounds[1] && bounds[2] < bounds[3]) || bounds.iter().any(|b| !b.is_finite()) {
        return Err(CliError::Config("--bounds must satisfy xmin < xmax and ymin < ymax".into()));
    }
    if args.resolution == 0 {
        return Err(CliError::Config("--resolution must be at least 1".into()));
    }
    let container = load_model(&args.model)?;
    let model = &container.model;
    if model.num_classes() != 2 {
        return Err(CliError::Runtime(format!(
            "surfaces need a binary model, this one has {} classes",
            model.num_classes()
        )));
    }

    let points = grid(bounds, args.resolution);
    let mut cells = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        let x = Matrix::new(chunk.len(), 2, chunk.iter().flatten().copied().collect())?;
        let probs = model.predict_proba(&x)?;
        let lik = model.scaled_likelihoods(&x)?;
        for (i, p) in probs.row_iter().enumerate() {
            let b = binary_summary(p)?;
            cells.push(SurfaceCell {
                x0: chunk[i][0],
                x1: chunk[i][1],
                p0: b.p0,
                entropy_bits: b.entropy_bits,
                variance: b.variance,
                u: b.u,
                scaled_likelihood: lik.as_ref().map(|l| l[i]),
            });
        }
    }

    create_dir(&args.out)?;
    if wants(&args.format, Format::Csv) {
        let path = args.out.join("surface.csv");
        let mut w = csv_writer(&path)?;
        for c in &cells {
            w.serialize(c).map_err(csv_error(&path))?;
        }
        w.flush().map_err(CliError::io(&path))?;
    }
    if wants(&args.format, Format::Svg) {
        let res = args.resolution;
        let mut maps: Vec<(&str, &str, Vec<f64>, (f64, f64))> = vec![
            ("probability", "p(y = 0 | x)", cells.iter().map(|c| c.p0).collect(), (0.0, 1.0)),
            ("variance", "p(1 - p)", cells.iter().map(|c| c.variance).collect(), (0.0, 0.25)),
            ("entropy", "entropy (bits)", cells.iter().map(|c| c.entropy_bits).collect(), (0.0, 1.0)),
            ("u", "1 - 2|p - 0.5|", cells.iter().map(|c| c.u).collect(), (0.0, 1.0)),
        ];
        if cells.first().is_some_and(|c| c.scaled_likelihood.is_some()) {
            maps.push((
                "likelihood",
                "scaled likelihood",
                cells.iter().map(|c| c.scaled_likelihood.unwrap_or(0.0)).collect(),
                (0.0, 1.0),
            ));
        }
        for (name, title, values, range) in maps {
            write_text(
                &args.out.join(format!("{name}.svg")),
                &svg::heatmap(title, &values, res, bounds, range),
            )?;
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_centers() {
        let g = grid([0.0, 2.0, 0.0, 1.0], 2);
        assert_eq!(g, vec![[0.5, 0.25], [1.5, 0.25], [0.5, 0.75], [1.5, 0.75]]);
        assert_eq!(grid([-1.0, 1.0, -1.0, 1.0], 200).len(), 40_000);
    }
}
