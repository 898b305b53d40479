use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `l2` here is coupled weight decay (`g + l2·p`); loss-level L2 is
    /// configured separately on the training configs.
    SgdMomentum {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        nesterov: bool,
        #[serde(default)]
        l2: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-7
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64, momentum: f64, nesterov: bool) -> Self {
        OptimizerKind::SgdMomentum {
            lr,
            momentum,
            nesterov,
            l2: 0.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::SgdMomentum { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::SgdMomentum {
                lr, momentum, l2, ..
            } => lr > 0.0 && (0.0..1.0).contains(&momentum) && l2 >= 0.0,
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings: {self:?}")))
        }
    }
}

/// First-order optimizer with per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    /// Velocity for SGD, first moment for Adam.
    first: Vec<Matrix>,
    /// Second moment for Adam; empty for SGD.
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Optimizer {
            lr: kind.lr(),
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Overrides the current learning rate (used by decay schedules).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn state_shapes(&self) -> Vec<(usize, usize)> {
        self.first.iter().map(Matrix::shape).collect()
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "parameter {i} is {:?} but its gradient is {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(s, p)| s.shape() != p.shape())
        {
            return Err(Error::invalid("parameter set changed between optimizer steps"));
        }
        self.step += 1;
        let lr = self.lr;

        match self.kind {
            OptimizerKind::SgdMomentum {
                momentum,
                nesterov,
                l2,
                ..
            } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(v.data_mut().iter_mut())
                    {
                        let grad = gv + l2 * *pv;
                        *vv = momentum * *vv + grad;
                        let update = if nesterov { grad + momentum * *vv } else { *vv };
                        *pv -= lr * update;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-constant decay: the base rate is multiplied by `ratio` once for
/// every boundary in `decay_epochs` that the current epoch has reached.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "one")]
    pub ratio: f64,
}

fn one() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant() -> Self {
        LrSchedule {
            decay_epochs: Vec::new(),
            ratio: 1.0,
        }
    }

    pub fn rate_at(&self, base: f64, epoch: usize) -> f64 {
        let hits = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        base * self.ratio.powi(hits as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.1, 0.0, false)).unwrap();
        let mut p = Matrix::scalar(1.0);
        opt.step(&mut [&mut p], &[Matrix::scalar(2.0)]).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [
            OptimizerKind::sgd(0.1, 0.9, true),
            OptimizerKind::sgd(0.1, 0.0, false),
            OptimizerKind::adam(1e-3),
        ] {
            let mut opt = Optimizer::new(kind).unwrap();
            let mut p = Matrix::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
            let before = p.clone();
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[Matrix::zeros(1, 3)]).unwrap();
            }
            assert_eq!(p, before, "{kind:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient() {
        let lr = 1e-3;
        let mut opt = Optimizer::new(OptimizerKind::adam(lr)).unwrap();
        let mut p = Matrix::new(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        opt.step(&mut [&mut p], &[Matrix::new(1, 3, vec![3.0, -0.02, 50.0]).unwrap()])
            .unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
        for (v, sign) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v.abs() - lr).abs() < lr * 1e-4);
            assert_eq!(v.signum(), sign);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut opt = Optimizer::new(OptimizerKind::adam(1e-3)).unwrap();
        let mut p = Matrix::zeros(2, 2);
        assert!(opt.step(&mut [&mut p], &[Matrix::zeros(1, 2)]).is_err());
        assert!(opt.step(&mut [&mut p], &[]).is_err());
    }

    #[test]
    fn state_mirrors_params() {
        let mut opt = Optimizer::new(OptimizerKind::adam(1e-3)).unwrap();
        let mut a = Matrix::zeros(2, 3);
        let mut b = Matrix::zeros(1, 3);
        opt.step(&mut [&mut a, &mut b], &[Matrix::zeros(2, 3), Matrix::zeros(1, 3)])
            .unwrap();
        assert_eq!(opt.state_shapes(), vec![(2, 3), (1, 3)]);
    }

    #[test]
    fn schedule_decays_at_boundaries() {
        let s = LrSchedule {
            decay_epochs: vec![60, 120, 160],
            ratio: 0.2,
        };
        assert_eq!(s.rate_at(0.05, 0), 0.05);
        assert!((s.rate_at(0.05, 60) - 0.01).abs() < 1e-15);
        assert!((s.rate_at(0.05, 170) - 0.05 * 0.008).abs() < 1e-15);
    }
}
