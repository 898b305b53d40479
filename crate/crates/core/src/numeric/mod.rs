//! Dense-layer math: matrices, a reverse-mode tape, layers and optimizers.

mod matrix;
mod nn;
mod optim;
mod tape;

pub use matrix::{dot, Matrix};
pub use nn::{l2_penalty, Activation, DenseLayer, DenseNet, LayerVars, NetVars};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `tanh` through `expm1`; within a few ulp of the libm version and
/// several times cheaper, which matters in the flow's scale nets.
pub fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp_m1();
    e / (e + 2.0)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input is not finite"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked variant for hot paths; `v` must be non-empty and finite.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::invalid(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_matches_libm() {
        let mut x = -25.0f64;
        while x < 25.0 {
            let (a, b) = (x.tanh(), tanh(x));
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300), "{x}: {a} vs {b}");
            x += 0.00731;
        }
        for x in [0.0f64, 1e-300, -1e-12, 1e-5, 20.0, -20.0] {
            assert!((x.tanh() - tanh(x)).abs() <= 1e-15 * x.tanh().abs(), "{x}");
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (v, e) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((v - e).abs() < 1e-5);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let a = softmax(&[1.0, -2.0, 0.5]).unwrap();
        let b = softmax(&[1001.0, 998.0, 1000.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty_and_nan() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.7, 0.3], 1).unwrap() - 1.20397).abs() < 1e-5);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }
}
