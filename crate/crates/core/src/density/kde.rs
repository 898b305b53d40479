use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Isotropic Gaussian kernel density estimate over stored support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    support: Matrix,
    bandwidth: f64,
}

/// Scott's rule, `n^(-1/(d+4))` times the root-mean per-dimension standard
/// deviation of `z`.
pub fn scott_bandwidth(z: &Matrix) -> Result<f64> {
    if z.rows() == 0 || z.cols() == 0 {
        return Err(Error::invalid("bandwidth of an empty sample"));
    }
    let n = z.rows() as f64;
    let d = z.cols() as f64;
    let sd = (z.col_variances().iter().sum::<f64>() / d).sqrt();
    let h = n.powf(-1.0 / (d + 4.0)) * sd;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "Scott bandwidth is {h}; the sample has no spread"
        )));
    }
    Ok(h)
}

pub fn kde_fit(z: &Matrix, bandwidth: f64) -> Result<KdeModel> {
    if z.rows() == 0 {
        return Err(Error::invalid("KDE needs at least one support point"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if !z.is_finite() {
        return Err(Error::invalid("KDE support must be finite"));
    }
    Ok(KdeModel {
        support: z.clone(),
        bandwidth,
    })
}

impl KdeModel {
    pub fn support(&self) -> &Matrix {
        &self.support
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    /// Stored scalars: support coordinates plus the bandwidth.
    pub fn param_count(&self) -> usize {
        self.support.len() + 1
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::invalid(format!(
                "KDE over {} dims queried with {}",
                self.dim(),
                z.len()
            )));
        }
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        let mut exps = Vec::with_capacity(self.support.rows());
        let mut max = f64::NEG_INFINITY;
        for s in self.support.row_iter() {
            let d2: f64 = s.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = inv * d2;
            max = max.max(e);
            exps.push(e);
        }
        let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
        let n = self.support.rows() as f64;
        let d = self.dim() as f64;
        let norm = 0.5 * d * (2.0 * std::f64::consts::PI * self.bandwidth * self.bandwidth).ln();
        Ok(lse - n.ln() - norm)
    }

    pub fn log_density_batch(&self, z: &Matrix) -> Result<Vec<f64>> {
        z.row_iter().map(|r| self.log_density(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_gaussian_pdf() {
        let kde = kde_fit(&Matrix::row_vector(vec![1.0, -2.0]), 0.5).unwrap();
        let (dx, dy) = (0.3f64, 0.1f64);
        let q = [1.0 + dx, -2.0 + dy];
        let pdf = (-(dx * dx + dy * dy) / (2.0 * 0.25)).exp() / (2.0 * std::f64::consts::PI * 0.25);
        assert!((kde.log_density(&q).unwrap() - pdf.ln()).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_must_be_positive() {
        let z = Matrix::row_vector(vec![0.0]);
        assert!(kde_fit(&z, 0.0).is_err());
        assert!(kde_fit(&z, -1.0).is_err());
        assert!(scott_bandwidth(&Matrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn scott_rule_value() {
        // 1-D sample {-1, 1}: variance 1, n = 2 => 2^(-1/5)
        let z = Matrix::column_vector(vec![-1.0, 1.0]);
        assert!((scott_bandwidth(&z).unwrap() - 2f64.powf(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let kde = kde_fit(&Matrix::row_vector(vec![0.0, 0.0]), 1.0).unwrap();
        assert!(kde.log_density(&[0.0]).is_err());
    }
}
