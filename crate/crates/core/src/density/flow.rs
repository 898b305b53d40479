//! Real-NVP affine coupling flow with a standard-normal base.
//!
//! Each coupling layer keeps the masked coordinates `a` and maps the
//! complement `b` to `b ⊙ exp(S(a)) + T(a)`, so the Jacobian is triangular
//! and its log-determinant is the row sum of `S(a)`. Subnets are
//! `hidden_layers` ReLU layers of `hidden_units` followed by a projection to
//! the complement width (tanh for `S`, linear for `T`). The projection is
//! zero-initialised, so a fresh flow is the identity map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{epoch_batches, non_finite_loss};
use crate::numeric::{
    l2_penalty, Activation, DenseLayer, DenseNet, Matrix, NetVars, Optimizer, OptimizerKind, Tape,
    Var,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArchitecture {
    pub coupling_layers: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
}

impl Default for FlowArchitecture {
    fn default() -> Self {
        FlowArchitecture {
            coupling_layers: 4,
            hidden_units: 16,
            hidden_layers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// `true` marks pass-through coordinates.
    mask: Vec<bool>,
    scale_net: DenseNet,
    shift_net: DenseNet,
}

impl CouplingLayer {
    pub fn new(mask: Vec<bool>, scale_net: DenseNet, shift_net: DenseNet) -> Result<Self> {
        let kept = mask.iter().filter(|&&m| m).count();
        let moved = mask.len() - kept;
        if kept == 0 || moved == 0 {
            return Err(Error::invalid("coupling mask needs at least one 0 and one 1"));
        }
        for (name, net) in [("scale", &scale_net), ("shift", &shift_net)] {
            if net.input_dim() != kept || net.output_dim() != moved {
                return Err(Error::shape(
                    "CouplingLayer::new",
                    format!(
                        "{name} subnet maps {} -> {}, mask needs {kept} -> {moved}",
                        net.input_dim(),
                        net.output_dim()
                    ),
                ));
            }
        }
        Ok(CouplingLayer {
            mask,
            scale_net,
            shift_net,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scale_net(&self) -> &DenseNet {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &DenseNet {
        &self.shift_net
    }

    fn kept(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    fn moved(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.shift_net.param_count()
    }
}

fn subnet(
    input: usize,
    output: usize,
    arch: &FlowArchitecture,
    last: Activation,
    rng: &mut ChaCha8Rng,
) -> Result<DenseNet> {
    let mut layers = Vec::with_capacity(arch.hidden_layers + 1);
    let mut width = input;
    for _ in 0..arch.hidden_layers {
        layers.push(DenseLayer::init(
            width,
            arch.hidden_units,
            Activation::Relu,
            true,
            false,
            rng,
        )?);
        width = arch.hidden_units;
    }
    layers.push(DenseLayer::zeroed(width, output, last, true));
    DenseNet::new(layers)
}

/// Alternating halves: even layers keep the first `d/2` coordinates, odd
/// layers keep the rest.
pub fn alternating_mask(dim: usize, layer: usize) -> Vec<bool> {
    let half = dim / 2;
    (0..dim)
        .map(|i| if layer % 2 == 0 { i < half } else { i >= half })
        .collect()
}

/// Fixed per-coordinate affine standardisation applied before the
/// couplings, `(z - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(z: &Matrix) -> Self {
        let mean = z.col_means();
        let scale = z
            .col_variances()
            .iter()
            .map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    fn log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    fn apply(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn invert(&self, t: &Matrix) -> Matrix {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    dim: usize,
    #[serde(default)]
    standardizer: Option<Standardizer>,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    /// Identity-initialised flow with alternating half masks.
    pub fn init(dim: usize, arch: &FlowArchitecture, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("a coupling flow needs at least two dimensions"));
        }
        if arch.coupling_layers == 0 || arch.hidden_units == 0 {
            return Err(Error::invalid("flow needs at least one layer and hidden unit"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.coupling_layers);
        for k in 0..arch.coupling_layers {
            let mask = alternating_mask(dim, k);
            let kept = mask.iter().filter(|&&m| m).count();
            let moved = dim - kept;
            let s = subnet(kept, moved, arch, Activation::Tanh, &mut rng)?;
            let t = subnet(kept, moved, arch, Activation::Linear, &mut rng)?;
            layers.push(CouplingLayer::new(mask, s, t)?);
        }
        Ok(FlowModel {
            dim,
            standardizer: None,
            layers,
        })
    }

    pub fn from_layers(dim: usize, standardizer: Option<Standardizer>, layers: Vec<CouplingLayer>) -> Result<Self> {
        if layers.iter().any(|l| l.mask.len() != dim) {
            return Err(Error::invalid("coupling mask width differs from flow dimension"));
        }
        if let Some(s) = &standardizer {
            if s.mean.len() != dim || s.scale.len() != dim || s.scale.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid("bad standardizer"));
            }
        }
        Ok(FlowModel {
            dim,
            standardizer,
            layers,
        })
    }

    pub fn with_standardizer(mut self, s: Standardizer) -> Result<Self> {
        if s.mean.len() != self.dim || s.scale.len() != self.dim {
            return Err(Error::invalid("standardizer width differs from flow dimension"));
        }
        self.standardizer = Some(s);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    /// Subnet parameters plus the standardisation constants.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CouplingLayer::param_count).sum::<usize>()
            + self.standardizer.as_ref().map_or(0, |s| s.mean.len() + s.scale.len())
    }

    fn check_input(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.dim {
            return Err(Error::invalid(format!(
                "flow over {} dims given {} columns",
                self.dim,
                z.cols()
            )));
        }
        if !z.is_finite() {
            return Err(Error::Numeric("flow input is not finite".into()));
        }
        Ok(())
    }

    /// Maps `z` to base space, returning per-row `log|det ∂t/∂z|`.
    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_input(z)?;
        let mut log_det = vec![0.0; z.rows()];
        let mut h = match &self.standardizer {
            Some(s) => {
                let ld = s.log_det();
                log_det.iter_mut().for_each(|v| *v += ld);
                s.apply(z)
            }
            None => z.clone(),
        };
        for (k, layer) in self.layers.iter().enumerate() {
            let kept = layer.kept();
            let moved = layer.moved();
            let a = h.select_cols(&kept);
            let s = layer.scale_net.forward(&a)?;
            let t = layer.shift_net.forward(&a)?;
            for r in 0..h.rows() {
                let row = h.row_mut(r);
                for (j, &c) in moved.iter().enumerate() {
                    let sv = s.get(r, j);
                    row[c] = row[c] * sv.exp() + t.get(r, j);
                    log_det[r] += sv;
                }
            }
            if !h.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value after coupling layer {k}"
                )));
            }
        }
        Ok((h, log_det))
    }

    pub fn inverse(&self, t: &Matrix) -> Result<Matrix> {
        self.check_input(t)?;
        let mut h = t.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let kept = layer.kept();
            let moved = layer.moved();
            let a = h.select_cols(&kept);
            let s = layer.scale_net.forward(&a)?;
            let sh = layer.shift_net.forward(&a)?;
            for r in 0..h.rows() {
                let row = h.row_mut(r);
                for (j, &c) in moved.iter().enumerate() {
                    row[c] = (row[c] - sh.get(r, j)) * (-s.get(r, j)).exp();
                }
            }
            if !h.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value inverting coupling layer {k}"
                )));
            }
        }
        Ok(match &self.standardizer {
            Some(s) => s.invert(&h),
            None => h,
        })
    }

    /// `log N(forward(z); 0, I) + log|det|` per row.
    pub fn log_density_batch(&self, z: &Matrix) -> Result<Vec<f64>> {
        let (t, log_det) = self.forward(z)?;
        let d = self.dim as f64;
        Ok(t.row_iter()
            .zip(log_det)
            .map(|(r, ld)| -0.5 * r.iter().map(|v| v * v).sum::<f64>() - d * HALF_LN_2PI + ld)
            .collect())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        Ok(self.log_density_batch(&Matrix::row_vector(z.to_vec()))?[0])
    }

    /// Subnet parameters, layer by layer, scale net before shift net.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let (s, t) = (&mut l.scale_net, &mut l.shift_net);
                s.params_mut().into_iter().chain(t.params_mut())
            })
            .collect()
    }

    /// Mean negative log-density of the rows of `z` and its gradient with
    /// respect to [`FlowModel::params_mut`], in the same order.
    pub fn nll_gradients(&self, z: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        self.check_input(z)?;
        let (base, const_term) = match &self.standardizer {
            Some(s) => (s.apply(z), self.dim as f64 * HALF_LN_2PI - s.log_det()),
            None => (z.clone(), self.dim as f64 * HALF_LN_2PI),
        };
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let loss = self.nll_tape(&mut tape, &vars, base)?;
        let value = tape.value(loss).get(0, 0) + const_term;
        let flat: Vec<Var> = vars
            .iter()
            .flat_map(|(s, t)| s.flat().into_iter().chain(t.flat()))
            .collect();
        Ok((value, tape.backward(loss)?.collect(&flat)))
    }

    fn bind(&self, tape: &mut Tape) -> Vec<(NetVars, NetVars)> {
        self.layers
            .iter()
            .map(|l| (l.scale_net.bind(tape), l.shift_net.bind(tape)))
            .collect()
    }

    /// Mean negative log-likelihood of the rows of `z` recorded on `tape`,
    /// without the constant `d/2·ln 2π` and standardisation terms.
    fn nll_tape(&self, tape: &mut Tape, vars: &[(NetVars, NetVars)], z: Matrix) -> Result<Var> {
        let mut h = tape.leaf(z);
        let mut log_det: Option<Var> = None;
        for (layer, (sv, tv)) in self.layers.iter().zip(vars) {
            let kept = layer.kept();
            let moved = layer.moved();
            let a = tape.select_cols(h, &kept)?;
            let b = tape.select_cols(h, &moved)?;
            let s = layer.scale_net.forward_tape(tape, sv, a)?;
            let t = layer.shift_net.forward_tape(tape, tv, a)?;
            let es = tape.exp(s)?;
            let scaled = tape.mul(b, es)?;
            let yb = tape.add(scaled, t)?;
            h = tape.merge_cols(a, &kept, yb, &moved)?;
            let ld = tape.sum_rows(s)?;
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        let sq = tape.square(h)?;
        let q = tape.sum_rows(sq)?;
        let half_q = tape.scale(q, 0.5)?;
        let per_row = match log_det {
            Some(ld) => tape.sub(half_q, ld)?,
            None => half_q,
        };
        tape.mean(per_row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Loss-level coefficient on subnet weights.
    #[serde(default = "default_flow_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub architecture: FlowArchitecture,
    /// Standardise each latent coordinate before the couplings.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn default_flow_l2() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

impl FlowFitConfig {
    /// Toy row: 3000 epochs of Adam at 1e-4.
    pub fn toy() -> Self {
        FlowFitConfig {
            epochs: 3000,
            lr: 1e-4,
            batch_size: 128,
            l2: default_flow_l2(),
            seed: 0,
            architecture: FlowArchitecture::default(),
            standardize: true,
        }
    }
}

/// Maximum-likelihood fit of a fresh flow by minimising mean NLL with Adam.
/// Returns the flow and its per-epoch mean training NLL (including the
/// L2 term).
pub fn flow_fit(z: &Matrix, cfg: &FlowFitConfig) -> Result<(FlowModel, Vec<f64>)> {
    let mut flow = FlowModel::init(z.cols(), &cfg.architecture, cfg.seed)?;
    if cfg.standardize {
        flow = flow.with_standardizer(Standardizer::fit(z))?;
    }
    let trace = flow_train(&mut flow, z, cfg)?;
    Ok((flow, trace))
}

/// Continues maximum-likelihood training of an existing flow.
pub fn flow_train(flow: &mut FlowModel, z: &Matrix, cfg: &FlowFitConfig) -> Result<Vec<f64>> {
    if z.cols() != flow.dim {
        return Err(Error::invalid("latent width differs from flow dimension"));
    }
    if cfg.batch_size == 0 || z.rows() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "flow fit needs at least batch_size ({}) rows, got {}",
            cfg.batch_size,
            z.rows()
        )));
    }
    if !z.is_finite() {
        return Err(Error::invalid("latent matrix is not finite"));
    }
    let mut opt = Optimizer::new(OptimizerKind::adam(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let (base, const_term) = match &flow.standardizer {
        Some(s) => (s.apply(z), flow.dim as f64 * HALF_LN_2PI - s.log_det()),
        None => (z.clone(), flow.dim as f64 * HALF_LN_2PI),
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(base.rows(), cfg.batch_size, &mut rng) {
            let mut tape = Tape::new();
            let vars = flow.bind(&mut tape);
            let mut loss = flow.nll_tape(&mut tape, &vars, base.select_rows(&batch))?;
            let weights: Vec<Var> = vars
                .iter()
                .flat_map(|(s, t)| s.weights().into_iter().chain(t.weights()))
                .collect();
            if let Some(pen) = l2_penalty(&mut tape, &weights, cfg.l2)? {
                loss = tape.add(loss, pen)?;
            }
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(non_finite_loss("flow fit", epoch, cfg.lr));
            }
            total += (value + const_term) * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let flat: Vec<Var> = vars
                .iter()
                .flat_map(|(s, t)| s.flat().into_iter().chain(t.flat()))
                .collect();
            let g = grads.collect(&flat);
            opt.step(&mut flow.params_mut(), &g)?;
        }
        trace.push(total / base.rows() as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_alternate_and_cover() {
        assert_eq!(alternating_mask(2, 0), vec![true, false]);
        assert_eq!(alternating_mask(2, 1), vec![false, true]);
        assert_eq!(alternating_mask(5, 0), vec![true, true, false, false, false]);
        assert_eq!(alternating_mask(5, 1), vec![false, false, true, true, true]);
    }

    #[test]
    fn fresh_flow_is_identity() {
        let flow = FlowModel::init(3, &FlowArchitecture::default(), 1).unwrap();
        let z = Matrix::new(2, 3, vec![0.1, -2.0, 3.0, 0.0, 5.0, -1.0]).unwrap();
        let (t, ld) = flow.forward(&z).unwrap();
        assert_eq!(t, z);
        assert_eq!(ld, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_density_at_origin() {
        let flow = FlowModel::init(2, &FlowArchitecture::default(), 1).unwrap();
        let lp = flow.log_density(&[0.0, 0.0]).unwrap();
        assert!((lp - (1.0 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-12);
        assert!((lp + 1.83788).abs() < 1e-5);
        let far = flow.log_density(&[1.0, 1.0]).unwrap();
        assert!(far < lp);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(FlowModel::init(1, &FlowArchitecture::default(), 0).is_err());
        let flow = FlowModel::init(2, &FlowArchitecture::default(), 0).unwrap();
        assert!(flow.forward(&Matrix::zeros(1, 3)).is_err());
        assert!(flow.forward(&Matrix::row_vector(vec![f64::NAN, 0.0])).is_err());
        assert!(flow.log_density_batch(&Matrix::row_vector(vec![f64::NAN, 0.0])).is_err());
        let l = &flow.layers()[0];
        assert!(CouplingLayer::new(vec![true, true], l.scale_net.clone(), l.shift_net.clone()).is_err());
    }

    #[test]
    fn fit_needs_a_full_batch() {
        let z = Matrix::zeros(10, 2);
        let cfg = FlowFitConfig {
            epochs: 1,
            batch_size: 32,
            ..FlowFitConfig::toy()
        };
        assert!(flow_fit(&z, &cfg).is_err());
    }

    #[test]
    fn zero_epochs_keeps_identity() {
        let z = Matrix::new(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.5]).unwrap();
        let cfg = FlowFitConfig {
            epochs: 0,
            batch_size: 2,
            standardize: false,
            ..FlowFitConfig::toy()
        };
        let (flow, trace) = flow_fit(&z, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(flow, FlowModel::init(2, &cfg.architecture, cfg.seed).unwrap());
    }
}
