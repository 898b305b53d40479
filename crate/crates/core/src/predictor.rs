//! The density-scaled softmax predictor and its three-stage training
//! pipeline.
//!
//! Inference for an input `x` is
//!
//! ```text
//! z = f(x);  s = scaled_likelihood(z) ∈ (0, 1];  p = softmax(s · zᵀθ)
//! ```
//!
//! Training runs ERM on encoder and classifier, freezes the encoder, fits
//! and scales a latent density, then re-optimises only the classifier under
//! the scaled objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::density::{compute_scale, DensityConfig, ScaledDensity};
use crate::error::{Error, Result};
use crate::model::{
    epoch_batches, erm_train, init_model, non_finite_loss, Classifier, Encoder, EncoderConfig,
    ErmModel, ProbabilisticClassifier, TrainConfig,
};
use crate::numeric::{entropy, l2_penalty, softmax_in_place, Matrix, Optimizer, OptimizerKind, Tape};

/// `softmax(s · u)`.
pub fn density_softmax_probs(logits: &[f64], scaled_likelihood: f64) -> Vec<f64> {
    let mut p: Vec<f64> = logits.iter().map(|u| scaled_likelihood * u).collect();
    softmax_in_place(&mut p);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub scaled_likelihood: f64,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySoftmaxModel {
    encoder: Encoder,
    classifier: Classifier,
    density: ScaledDensity,
}

impl DensitySoftmaxModel {
    pub fn new(encoder: Encoder, classifier: Classifier, density: ScaledDensity) -> Result<Self> {
        let d = encoder.latent_dim();
        if classifier.latent_dim() != d || density.dim() != d {
            return Err(Error::invalid(format!(
                "latent widths disagree: encoder {d}, classifier {}, density {}",
                classifier.latent_dim(),
                density.dim()
            )));
        }
        Ok(DensitySoftmaxModel {
            encoder,
            classifier,
            density,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn density(&self) -> &ScaledDensity {
        &self.density
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// One encoder pass, one density pass and one matrix product per row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<Prediction>> {
        let z = self.encoder.encode(x)?;
        let s = self.density.scaled_likelihood_batch(&z)?;
        let u = self.classifier.logits(&z)?;
        Ok(z.row_iter()
            .zip(u.row_iter())
            .zip(s)
            .map(|((zr, ur), s)| Prediction {
                probs: density_softmax_probs(ur, s),
                scaled_likelihood: s,
                latent: zr.to_vec(),
            })
            .collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Prediction> {
        let mut p = self.predict(&Matrix::row_vector(x.to_vec()))?;
        Ok(p.remove(0))
    }

    /// Per-row scaled likelihoods of the encoded inputs.
    pub fn scaled_likelihoods(&self, x: &Matrix) -> Result<Vec<f64>> {
        let z = self.encoder.encode(x)?;
        self.density.scaled_likelihood_batch(&z)
    }

    /// The same encoder and classifier with the density dropped.
    pub fn without_density(&self) -> ErmModel {
        ErmModel {
            encoder: self.encoder.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// Mean cross-entropy of `softmax(s·u)` on a labelled set.
    pub fn scaled_objective(&self, set: &LabeledSet) -> Result<f64> {
        let preds = self.predict(&set.features)?;
        let total: f64 = preds
            .iter()
            .zip(&set.labels)
            .map(|(p, &y)| crate::numeric::cross_entropy(&p.probs, y))
            .sum::<Result<f64>>()?;
        Ok(total / set.len() as f64)
    }

    /// Step 3 in place; see [`reoptimize_classifier`].
    pub fn reoptimize(&mut self, train: &LabeledSet, cfg: &ReoptConfig) -> Result<Vec<f64>> {
        reoptimize_classifier(&self.encoder, &mut self.classifier, Some(&self.density), train, cfg)
    }
}

impl ProbabilisticClassifier for DensitySoftmaxModel {
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.encoder.encode(x)?;
        let s = self.density.scaled_likelihood_batch(&z)?;
        let u = self.classifier.logits(&z)?;
        let data = u
            .row_iter()
            .zip(s)
            .flat_map(|(ur, s)| density_softmax_probs(ur, s))
            .collect();
        Matrix::new(x.rows(), self.num_classes(), data)
    }

    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn param_count(&self) -> usize {
        crate::model::param_count(&self.encoder, &self.classifier, &[self.density.param_count()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReoptConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    /// Start from a fresh classifier instead of the ERM weights.
    #[serde(default)]
    pub reinit: bool,
}

impl ReoptConfig {
    pub fn toy() -> Self {
        ReoptConfig {
            epochs: 100,
            lr: 1e-3,
            batch_size: 128,
            l2: 0.0,
            seed: 0,
            reinit: false,
        }
    }
}

/// Re-fits the classifier against `softmax(s(z) · zᵀθ)` with latents and
/// scaled likelihoods computed once up front. The encoder and density are
/// only read. Returns per-epoch mean objective.
pub fn reoptimize_classifier(
    encoder: &Encoder,
    classifier: &mut Classifier,
    density: Option<&ScaledDensity>,
    train: &LabeledSet,
    cfg: &ReoptConfig,
) -> Result<Vec<f64>> {
    let density = density.ok_or_else(|| {
        Error::State("classifier re-optimisation needs a fitted, scaled density".into())
    })?;
    train.ensure_train("classifier re-optimisation")?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if cfg.reinit {
        *classifier = Classifier::init(classifier.latent_dim(), classifier.num_classes(), cfg.seed)?;
    }
    let z = encoder.encode(&train.features)?;
    let s = density.scaled_likelihood_batch(&z)?;
    let mut opt = Optimizer::new(OptimizerKind::adam(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let col = Matrix::column_vector(batch.iter().map(|&i| s[i]).collect());
            let mut tape = Tape::new();
            let w = tape.leaf(classifier.weight.clone());
            let zv = tape.leaf(z.select_rows(&batch));
            let sv = tape.leaf(col);
            let u = tape.matmul(zv, w)?;
            let su = tape.mul_col(u, sv)?;
            let mut loss = tape.softmax_cross_entropy(su, &y)?;
            if let Some(pen) = l2_penalty(&mut tape, &[w], cfg.l2)? {
                loss = tape.add(loss, pen)?;
            }
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(non_finite_loss("classifier re-optimisation", epoch, cfg.lr));
            }
            total += value * batch.len() as f64;
            let g = tape.backward(loss)?.collect(&[w]);
            opt.step(&mut [&mut classifier.weight], &g)?;
        }
        trace.push(total / train.len() as f64);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub density: DensityConfig,
    pub reopt: ReoptConfig,
    /// Seed for encoder/classifier initialisation.
    #[serde(default)]
    pub init_seed: u64,
    /// Batch size used while streaming the training max log-density.
    #[serde(default = "default_scale_batch")]
    pub scale_batch_size: usize,
}

fn default_scale_batch() -> usize {
    128
}

impl PipelineConfig {
    /// Toy defaults with the desk-scale encoder and a Gaussian KDE.
    pub fn toy(input_dim: usize) -> Self {
        PipelineConfig {
            encoder: EncoderConfig::desk(input_dim),
            train: TrainConfig::toy(),
            density: DensityConfig::default(),
            reopt: ReoptConfig::toy(),
            init_seed: 0,
            scale_batch_size: default_scale_batch(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: DensitySoftmaxModel,
    /// Encoder and classifier right after ERM, before re-optimisation.
    pub erm: ErmModel,
    pub erm_trace: Vec<f64>,
    pub reopt_trace: Vec<f64>,
}

/// ERM, then density fit and scaling on frozen latents, then classifier
/// re-optimisation.
pub fn train_pipeline(train: &LabeledSet, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    train.ensure_train("training pipeline")?;
    let k = train.num_classes();
    if k < 2 {
        return Err(Error::invalid("training data must contain at least two classes"));
    }

    let (mut encoder, mut classifier) =
        init_model(&cfg.encoder, k, cfg.init_seed).map_err(Error::in_stage("initialisation"))?;
    let erm_trace = erm_train(&mut encoder, &mut classifier, train, &cfg.train)
        .map_err(Error::in_stage("ERM training"))?;
    let erm = ErmModel::new(encoder.clone(), classifier.clone())?;

    let density = (|| {
        let z = encoder.encode(&train.features)?;
        let fitted = cfg.density.fit(&z)?;
        compute_scale(fitted, &z, cfg.scale_batch_size)
    })()
    .map_err(Error::in_stage("density estimation"))?;

    let mut model = DensitySoftmaxModel::new(encoder, classifier, density)?;
    let reopt_trace = model
        .reoptimize(train, &cfg.reopt)
        .map_err(Error::in_stage("classifier re-optimisation"))?;
    Ok(PipelineOutput {
        model,
        erm,
        erm_trace,
        reopt_trace,
    })
}

/// Binary-only uncertainty summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySummary {
    /// Probability of class 0.
    pub p0: f64,
    /// Bernoulli variance `p(1 − p)`.
    pub variance: f64,
    /// Distance-from-certainty score `1 − 2|p − 0.5|`.
    pub u: f64,
    pub entropy_bits: f64,
}

pub fn binary_summary(probs: &[f64]) -> Result<BinarySummary> {
    if probs.len() != 2 {
        return Err(Error::invalid(format!(
            "binary summaries need K = 2, got K = {}",
            probs.len()
        )));
    }
    let p = probs[0];
    Ok(BinarySummary {
        p0: p,
        variance: p * (1.0 - p),
        u: 1.0 - 2.0 * (p - 0.5).abs(),
        entropy_bits: entropy(probs) / std::f64::consts::LN_2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub entropy_nats: f64,
    pub max_prob: f64,
    /// `None` for models without a density.
    pub scaled_likelihood: Option<f64>,
    /// Present when K = 2.
    pub binary: Option<BinarySummary>,
}

/// Summaries from one probability row per sample.
pub fn summarize(probs: &Matrix, likelihoods: Option<&[f64]>) -> Result<Vec<PredictiveSummary>> {
    if let Some(l) = likelihoods {
        if l.len() != probs.rows() {
            return Err(Error::invalid("one likelihood per prediction is required"));
        }
    }
    probs
        .row_iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(PredictiveSummary {
                entropy_nats: entropy(p),
                max_prob: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                scaled_likelihood: likelihoods.map(|l| l[i]),
                binary: if p.len() == 2 { Some(binary_summary(p)?) } else { None },
            })
        })
        .collect()
}

/// Summaries for every row of `set` under the density-softmax model.
pub fn predictive_summaries(model: &DensitySoftmaxModel, set: &LabeledSet) -> Result<Vec<PredictiveSummary>> {
    let preds = model.predict(&set.features)?;
    let k = model.num_classes();
    let s: Vec<f64> = preds.iter().map(|p| p.scaled_likelihood).collect();
    let probs = Matrix::new(
        preds.len(),
        k,
        preds.into_iter().flat_map(|p| p.probs).collect(),
    )?;
    summarize(&probs, Some(&s))
}
