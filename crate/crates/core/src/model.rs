//! Residual feed-forward encoder, bias-free linear classifier head, ERM
//! training and the deep-ensemble baseline.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numeric::{
    l2_penalty, softmax_in_place, Activation, DenseLayer, DenseNet, LrSchedule, Matrix, Optimizer,
    OptimizerKind, Tape,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub latent_dim: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

impl EncoderConfig {
    /// Desk-scale default: four residual blocks of width 32.
    pub fn desk(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            width: 32,
            depth: 4,
            latent_dim: 32,
            activation: Activation::Relu,
        }
    }

    /// ResFFN-12-128.
    pub fn resffn_12_128(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            width: 128,
            depth: 12,
            latent_dim: 128,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        if self.input_dim == 0 || self.width == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.width != self.latent_dim {
            return Err(Error::Config(format!(
                "residual blocks need width == latent_dim, got {} and {}",
                self.width, self.latent_dim
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count of the encoder alone.
    pub fn param_count(&self) -> usize {
        let w = self.width;
        self.input_dim * w + w + self.depth * (w * w + w)
    }
}

/// Linear input projection followed by `depth` blocks `h + act(h W + b)`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Encoder {
    config: EncoderConfig,
    net: DenseNet,
    /// Rows pushed through [`Encoder::encode`]; lets tests verify the
    /// single-pass inference contract.
    #[serde(skip)]
    rows_encoded: AtomicU64,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Encoder {
            config: self.config.clone(),
            net: self.net.clone(),
            rows_encoded: AtomicU64::new(0),
        }
    }
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.net == other.net
    }
}

impl Encoder {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.depth + 1);
        layers.push(DenseLayer::init(
            config.input_dim,
            config.width,
            Activation::Linear,
            true,
            false,
            &mut rng,
        )?);
        for _ in 0..config.depth {
            layers.push(DenseLayer::init(
                config.width,
                config.width,
                config.activation,
                true,
                true,
                &mut rng,
            )?);
        }
        Self::from_net(config.clone(), DenseNet::new(layers)?)
    }

    pub fn from_net(config: EncoderConfig, net: DenseNet) -> Result<Self> {
        config.validate()?;
        if net.input_dim() != config.input_dim || net.output_dim() != config.latent_dim {
            return Err(Error::Config(format!(
                "network maps {} -> {} but config says {} -> {}",
                net.input_dim(),
                net.output_dim(),
                config.input_dim,
                config.latent_dim
            )));
        }
        Ok(Encoder {
            config,
            net,
            rows_encoded: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn rows_encoded(&self) -> u64 {
        self.rows_encoded.load(Ordering::Relaxed)
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.input_dim {
            return Err(Error::invalid(format!(
                "encoder expects {} features, got {}",
                self.config.input_dim,
                x.cols()
            )));
        }
        self.rows_encoded.fetch_add(x.rows() as u64, Ordering::Relaxed);
        self.net.forward(x)
    }
}

/// Bias-free linear head `u = z θ`, θ is `d_z x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weight: Matrix,
}

impl Classifier {
    pub fn new(weight: Matrix) -> Result<Self> {
        if weight.cols() < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        if !weight.is_finite() {
            return Err(Error::invalid("classifier weights must be finite"));
        }
        Ok(Classifier { weight })
    }

    pub fn init(latent_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 || latent_dim == 0 {
            return Err(Error::invalid("classifier needs d_z >= 1 and K >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = DenseLayer::init(
            latent_dim,
            num_classes,
            Activation::Linear,
            false,
            false,
            &mut rng,
        )?;
        Self::new(layer.weight)
    }

    pub fn zeros(latent_dim: usize, num_classes: usize) -> Self {
        Classifier {
            weight: Matrix::zeros(latent_dim, num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.weight.rows() {
            return Err(Error::invalid(format!(
                "classifier expects {} latent features, got {}",
                self.weight.rows(),
                z.cols()
            )));
        }
        z.matmul(&self.weight)
    }
}

/// Encoder and classifier initialised from one seed (the classifier draws
/// from `seed + 1`).
pub fn init_model(cfg: &EncoderConfig, num_classes: usize, seed: u64) -> Result<(Encoder, Classifier)> {
    let enc = Encoder::init(cfg, seed)?;
    let clf = Classifier::init(cfg.latent_dim, num_classes, seed.wrapping_add(1))?;
    Ok((enc, clf))
}

/// Total scalar parameters of an encoder + classifier plus any extra
/// components (for example a density model).
pub fn param_count(enc: &Encoder, clf: &Classifier, extra: &[usize]) -> usize {
    enc.param_count() + clf.param_count() + extra.iter().sum::<usize>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Loss-level coefficient on `Σ ||W||²` over weight matrices.
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Toy row: 100 epochs, batch 128, Adam at 1e-4.
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            optimizer: OptimizerKind::adam(1e-4),
            schedule: LrSchedule::constant(),
            l2: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

/// Shuffled mini-batch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn non_finite_loss(stage: &str, epoch: usize, lr: f64) -> Error {
    Error::Numeric(format!(
        "{stage}: loss became non-finite in epoch {epoch} (learning rate {lr:e} may be too high)"
    ))
}

/// Mean cross-entropy training of encoder and classifier together.
/// Returns the per-epoch mean training objective.
pub fn erm_train(
    enc: &mut Encoder,
    clf: &mut Classifier,
    train: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    train.ensure_train("ERM training")?;
    cfg.validate()?;
    if train.dim() != enc.config.input_dim {
        return Err(Error::invalid("training features do not match encoder input"));
    }
    if let Some(&bad) = train.labels.iter().find(|&&y| y >= clf.num_classes()) {
        return Err(Error::invalid(format!("label {bad} exceeds classifier width")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let base_lr = cfg.optimizer.lr();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate_at(base_lr, epoch);
        opt.set_learning_rate(lr);
        let mut total = 0.0;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let x = train.features.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();

            let mut tape = Tape::new();
            let enc_vars = enc.net.bind(&mut tape);
            let w = tape.leaf(clf.weight.clone());
            let xv = tape.leaf(x);
            let z = enc.net.forward_tape(&mut tape, &enc_vars, xv)?;
            let u = tape.matmul(z, w)?;
            let mut loss = tape.softmax_cross_entropy(u, &y)?;
            let mut weights = enc_vars.weights();
            weights.push(w);
            if let Some(pen) = l2_penalty(&mut tape, &weights, cfg.l2)? {
                loss = tape.add(loss, pen)?;
            }
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(non_finite_loss("ERM training", epoch, lr));
            }
            total += value * batch.len() as f64;

            let grads = tape.backward(loss)?;
            let mut vars = enc_vars.flat();
            vars.push(w);
            let g = grads.collect(&vars);
            let mut params = enc.net.params_mut();
            params.push(&mut clf.weight);
            opt.step(&mut params, &g)?;
        }
        trace.push(total / train.len() as f64);
    }
    Ok(trace)
}

/// Something that maps a batch of inputs to per-row class probabilities.
pub trait ProbabilisticClassifier {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix>;
    fn num_classes(&self) -> usize;
    fn param_count(&self) -> usize;
}

/// Plain softmax model: the ERM baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmModel {
    pub encoder: Encoder,
    pub classifier: Classifier,
}

impl ErmModel {
    pub fn new(encoder: Encoder, classifier: Classifier) -> Result<Self> {
        if encoder.latent_dim() != classifier.latent_dim() {
            return Err(Error::invalid("encoder and classifier disagree on d_z"));
        }
        Ok(ErmModel {
            encoder,
            classifier,
        })
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.encoder.encode(x)?;
        self.classifier.logits(&z)
    }
}

pub(crate) fn softmax_rows(mut u: Matrix) -> Matrix {
    for r in 0..u.rows() {
        softmax_in_place(u.row_mut(r));
    }
    u
}

impl ProbabilisticClassifier for ErmModel {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(self.logits(x)?))
    }

    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn param_count(&self) -> usize {
        param_count(&self.encoder, &self.classifier, &[])
    }
}

/// Deep ensemble: arithmetic mean of member probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<ErmModel>,
}

impl Ensemble {
    pub fn new(members: Vec<ErmModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid("an ensemble needs at least two members"));
        }
        let k = members[0].num_classes();
        if members.iter().any(|m| m.num_classes() != k) {
            return Err(Error::invalid("ensemble members disagree on K"));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[ErmModel] {
        &self.members
    }
}

impl ProbabilisticClassifier for Ensemble {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut acc = self.members[0].predict_proba(x)?;
        for m in &self.members[1..] {
            let p = m.predict_proba(x)?;
            acc.data_mut()
                .iter_mut()
                .zip(p.data())
                .for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / self.members.len() as f64;
        acc.data_mut().iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }

    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn param_count(&self) -> usize {
        self.members.iter().map(ProbabilisticClassifier::param_count).sum()
    }
}

/// Trains `members` ERM models that differ only in their seeds: member `i`
/// uses init seed `init_seed + 1000·i` and shuffle seed `cfg.seed + i`.
pub fn ensemble_train(
    members: usize,
    enc_cfg: &EncoderConfig,
    num_classes: usize,
    cfg: &TrainConfig,
    train: &LabeledSet,
    init_seed: u64,
) -> Result<Ensemble> {
    if members < 2 {
        return Err(Error::invalid("an ensemble needs at least two members"));
    }
    let mut out = Vec::with_capacity(members);
    for i in 0..members as u64 {
        let (mut enc, mut clf) = init_model(enc_cfg, num_classes, init_seed.wrapping_add(1000 * i))?;
        let member_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i),
            ..cfg.clone()
        };
        erm_train(&mut enc, &mut clf, train, &member_cfg)?;
        out.push(ErmModel::new(enc, clf)?);
    }
    Ensemble::new(out)
}
