//! Versioned JSON model containers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ensemble, ErmModel, ProbabilisticClassifier};
use crate::numeric::Matrix;
use crate::predictor::{DensitySoftmaxModel, PipelineConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredModel {
    Erm(ErmModel),
    DensitySoftmax(DensitySoftmaxModel),
    Ensemble(Ensemble),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Erm(_) => "erm",
            StoredModel::DensitySoftmax(_) => "density_softmax",
            StoredModel::Ensemble(_) => "ensemble",
        }
    }

    pub fn as_classifier(&self) -> &dyn ProbabilisticClassifier {
        match self {
            StoredModel::Erm(m) => m,
            StoredModel::DensitySoftmax(m) => m,
            StoredModel::Ensemble(m) => m,
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.as_classifier().predict_proba(x)
    }

    pub fn num_classes(&self) -> usize {
        self.as_classifier().num_classes()
    }

    pub fn param_count(&self) -> usize {
        self.as_classifier().param_count()
    }

    /// Per-row scaled likelihoods, for models that carry a density.
    pub fn scaled_likelihoods(&self, x: &Matrix) -> Result<Option<Vec<f64>>> {
        match self {
            StoredModel::DensitySoftmax(m) => m.scaled_likelihoods(x).map(Some),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub version: u32,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
    pub model: StoredModel,
}

impl ModelContainer {
    pub fn new(model: StoredModel, config: Option<PipelineConfig>) -> Self {
        ModelContainer {
            version: FORMAT_VERSION,
            config,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ModelContainer = serde_json::from_str(text)?;
        if c.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model container version {} (expected {FORMAT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
