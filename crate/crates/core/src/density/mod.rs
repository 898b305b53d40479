//! Latent-space density estimation and likelihood scaling into (0, 1].

mod flow;
mod kde;

pub use flow::{
    alternating_mask, flow_fit, flow_train, CouplingLayer, FlowArchitecture, FlowFitConfig,
    FlowModel, Standardizer,
};
pub use kde::{kde_fit, scott_bandwidth, KdeModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Smallest value a scaled likelihood may take; keeps the range open at 0.
pub const LIKELIHOOD_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    Kde(KdeModel),
    Flow(FlowModel),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Kde(k) => k.dim(),
            DensityModel::Flow(f) => f.dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            DensityModel::Kde(k) => k.param_count(),
            DensityModel::Flow(f) => f.param_count(),
        }
    }

    pub fn log_density_batch(&self, z: &Matrix) -> Result<Vec<f64>> {
        match self {
            DensityModel::Kde(k) => k.log_density_batch(z),
            DensityModel::Flow(f) => f.log_density_batch(z),
        }
    }
}

/// How to fit the latent density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityConfig {
    /// Gaussian KDE; bandwidth defaults to Scott's rule.
    Kde {
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Flow(FlowFitConfig),
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig::Kde { bandwidth: None }
    }
}

impl DensityConfig {
    pub fn fit(&self, z: &Matrix) -> Result<DensityModel> {
        match self {
            DensityConfig::Kde { bandwidth } => {
                let h = match bandwidth {
                    Some(h) => *h,
                    None => scott_bandwidth(z)?,
                };
                Ok(DensityModel::Kde(kde_fit(z, h)?))
            }
            DensityConfig::Flow(cfg) => Ok(DensityModel::Flow(flow_fit(z, cfg)?.0)),
        }
    }
}

/// A density model together with the largest log-density seen on the
/// training latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledDensity {
    inner: DensityModel,
    max_train_log_density: f64,
}

/// Streams over `train_z` in batches and records the maximum log-density.
pub fn compute_scale(density: DensityModel, train_z: &Matrix, batch_size: usize) -> Result<ScaledDensity> {
    if train_z.rows() == 0 {
        return Err(Error::Empty("cannot scale a density without training latents".into()));
    }
    let batch_size = batch_size.max(1);
    let mut max = f64::NEG_INFINITY;
    let idx: Vec<usize> = (0..train_z.rows()).collect();
    for chunk in idx.chunks(batch_size) {
        let lp = density.log_density_batch(&train_z.select_rows(chunk))?;
        let batch_max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if batch_max > max {
            max = batch_max;
        }
    }
    if !max.is_finite() {
        return Err(Error::Numeric(format!("training log-density maximum is {max}")));
    }
    ScaledDensity::new(density, max)
}

impl ScaledDensity {
    pub fn new(inner: DensityModel, max_train_log_density: f64) -> Result<Self> {
        if !max_train_log_density.is_finite() {
            return Err(Error::invalid("scale constant must be finite"));
        }
        Ok(ScaledDensity {
            inner,
            max_train_log_density,
        })
    }

    pub fn inner(&self) -> &DensityModel {
        &self.inner
    }

    pub fn max_train_log_density(&self) -> f64 {
        self.max_train_log_density
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Parameters of the underlying estimator; the scale constant is not
    /// counted.
    pub fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Maps a log-density onto (0, 1].
    pub fn scale_log_density(&self, log_density: f64) -> f64 {
        let s = (log_density - self.max_train_log_density).exp();
        if s >= 1.0 {
            1.0
        } else if s < LIKELIHOOD_FLOOR {
            LIKELIHOOD_FLOOR
        } else {
            s
        }
    }

    /// `exp(log p(z) − max_train_log_p)` per row, clamped into (0, 1].
    pub fn scaled_likelihood_batch(&self, z: &Matrix) -> Result<Vec<f64>> {
        let lp = self.inner.log_density_batch(z)?;
        lp.into_iter()
            .map(|l| {
                if l.is_nan() {
                    Err(Error::Numeric("log-density is NaN".into()))
                } else {
                    Ok(self.scale_log_density(l))
                }
            })
            .collect()
    }

    pub fn scaled_likelihood(&self, z: &[f64]) -> Result<f64> {
        Ok(self.scaled_likelihood_batch(&Matrix::row_vector(z.to_vec()))?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_training_point_scales_to_one() {
        let z = Matrix::new(4, 2, vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.2, 3.0, 3.0]).unwrap();
        let kde = DensityConfig::Kde { bandwidth: Some(0.5) }.fit(&z).unwrap();
        let lp = kde.log_density_batch(&z).unwrap();
        let best = crate::numeric::argmax(&lp);
        let sd = compute_scale(kde, &z, 3).unwrap();
        let s = sd.scaled_likelihood_batch(&z).unwrap();
        assert_eq!(s[best], 1.0);
        for (i, v) in s.iter().enumerate() {
            assert!(*v > 0.0 && *v <= 1.0);
            if lp[i] < lp[best] {
                assert!(*v < 1.0);
            }
        }
    }

    #[test]
    fn denser_than_train_clamps_to_one() {
        let z = Matrix::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let kde = DensityConfig::Kde { bandwidth: Some(1.0) }.fit(&z).unwrap();
        let sd = compute_scale(kde, &z, 8).unwrap();
        // the midpoint is denser than either support point
        assert_eq!(sd.scaled_likelihood(&[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn underflow_maps_to_floor() {
        let flow = FlowModel::init(2, &FlowArchitecture::default(), 0).unwrap();
        let sd = ScaledDensity::new(DensityModel::Flow(flow), -1.8378770664093453).unwrap();
        // ||z|| = 20: exp(-200) is tiny but representable
        let s20 = sd.scaled_likelihood(&[20.0, 0.0]).unwrap();
        assert!(s20 < 1e-80 && s20 > LIKELIHOOD_FLOOR);
        // ||z|| = 40: exp(-800) underflows to zero and is raised to the floor
        assert_eq!(sd.scaled_likelihood(&[40.0, 0.0]).unwrap(), LIKELIHOOD_FLOOR);
    }

    #[test]
    fn empty_training_latents_error() {
        let kde = DensityModel::Kde(kde_fit(&Matrix::row_vector(vec![0.0]), 1.0).unwrap());
        assert!(compute_scale(kde, &Matrix::zeros(0, 1), 4).is_err());
    }
}
