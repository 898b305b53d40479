use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => super::tanh(x),
            Activation::Linear => x,
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Linear => Ok(v),
        }
    }
}

/// One affine layer `act(x W + b)`, optionally residual: `x + act(x W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl DenseLayer {
    /// Fan-in scaled uniform init, `W ~ U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        with_bias: bool,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let limit = 1.0 / (input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self::new(
            Matrix::new(input, output, data)?,
            with_bias.then(|| Matrix::zeros(1, output)),
            activation,
            residual,
        )
    }

    pub fn zeroed(input: usize, output: usize, activation: Activation, with_bias: bool) -> Self {
        DenseLayer {
            weight: Matrix::zeros(input, output),
            bias: with_bias.then(|| Matrix::zeros(1, output)),
            activation,
            residual: false,
        }
    }

    pub fn new(
        weight: Matrix,
        bias: Option<Matrix>,
        activation: Activation,
        residual: bool,
    ) -> Result<Self> {
        if let Some(b) = &bias {
            if b.shape() != (1, weight.cols()) {
                return Err(Error::shape(
                    "DenseLayer::new",
                    format!("bias {:?} for weight {:?}", b.shape(), weight.shape()),
                ));
            }
        }
        if residual && weight.rows() != weight.cols() {
            return Err(Error::invalid(format!(
                "residual layer must be square, got {}x{}",
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
            residual,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Matrix::len)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul(&self.weight)?;
        let cols = h.cols();
        for r in 0..h.rows() {
            let row = h.row_mut(r);
            if let Some(b) = &self.bias {
                row.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
            }
            row.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            if self.residual {
                let xr = &x.data()[r * cols..(r + 1) * cols];
                row.iter_mut().zip(xr).for_each(|(v, xv)| *v += xv);
            }
        }
        Ok(h)
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct NetVars {
    pub layers: Vec<LayerVars>,
}

impl NetVars {
    /// Parameter handles in the same order as [`DenseNet::params`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight);
            if let Some(b) = l.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn weights(&self) -> Vec<Var> {
        self.layers.iter().map(|l| l.weight).collect()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DenseLayer>", into = "Vec<DenseLayer>")]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl TryFrom<Vec<DenseLayer>> for DenseNet {
    type Error = Error;

    fn try_from(layers: Vec<DenseLayer>) -> Result<Self> {
        DenseNet::new(layers)
    }
}

impl From<DenseNet> for Vec<DenseLayer> {
    fn from(n: DenseNet) -> Self {
        n.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "DenseNet::new",
                    format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        pair[0].output_dim(),
                        i + 1,
                        pair[1].input_dim()
                    ),
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.residual && l.input_dim() != l.output_dim() {
                return Err(Error::invalid(format!("residual layer {i} is not square")));
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let Some(b) = &l.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(b) = &mut l.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "DenseNet::forward",
                format!("input has {} columns, expected {}", x.cols(), self.input_dim()),
            ));
        }
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    /// Copies the parameters onto the tape as leaves.
    pub fn bind(&self, tape: &mut Tape) -> NetVars {
        NetVars {
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    weight: tape.leaf(l.weight.clone()),
                    bias: l.bias.as_ref().map(|b| tape.leaf(b.clone())),
                })
                .collect(),
        }
    }

    /// Records the forward pass using previously bound parameters.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &NetVars, x: Var) -> Result<Var> {
        if vars.layers.len() != self.layers.len() {
            return Err(Error::invalid("parameter handles do not match network"));
        }
        let mut h = x;
        for (l, v) in self.layers.iter().zip(&vars.layers) {
            let mut a = tape.matmul(h, v.weight)?;
            if let Some(b) = v.bias {
                a = tape.add_row(a, b)?;
            }
            a = l.activation.record(tape, a)?;
            h = if l.residual { tape.add(h, a)? } else { a };
        }
        Ok(h)
    }
}

/// `coef * Σ ||W||²` over the given weight handles.
pub fn l2_penalty(tape: &mut Tape, weights: &[Var], coef: f64) -> Result<Option<Var>> {
    if coef == 0.0 || weights.is_empty() {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for &w in weights {
        let sq = tape.square(w)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    total.map(|t| tape.scale(t, coef)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimension_composition_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = DenseLayer::init(2, 3, Activation::Relu, true, false, &mut rng).unwrap();
        let b = DenseLayer::init(4, 1, Activation::Linear, true, false, &mut rng).unwrap();
        assert!(DenseNet::new(vec![a, b]).is_err());
    }

    #[test]
    fn residual_must_be_square() {
        let w = Matrix::zeros(2, 3);
        assert!(DenseLayer::new(w, None, Activation::Relu, true).is_err());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(vec![
            DenseLayer::init(3, 5, Activation::Linear, true, false, &mut rng).unwrap(),
            DenseLayer::init(5, 5, Activation::Relu, true, true, &mut rng).unwrap(),
            DenseLayer::init(5, 2, Activation::Tanh, false, false, &mut rng).unwrap(),
        ])
        .unwrap();
        let x = Matrix::new(2, 3, vec![0.1, -0.4, 2.0, 1.5, 0.3, -0.7]).unwrap();
        let plain = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.leaf(x);
        let out = net.forward_tape(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(out), &plain);
    }
}
