//! Experiment configuration files and the data sets they describe.

use std::fs;
use std::path::{Path, PathBuf};

use density_softmax::data::{
    apply_shift, as_iid_test, default_ood_center, load_csv, make_ood_cluster, make_two_moons,
    make_two_ovals, save_csv, Domain, LabeledSet, ShiftKind, ShiftSpec, DEFAULT_NOISE_SCALES,
    DEFAULT_OOD_DISTANCE_SD,
};
use density_softmax::density::DensityConfig;
use density_softmax::metrics::MetricConfig;
use density_softmax::model::{EncoderConfig, TrainConfig};
use density_softmax::predictor::{PipelineConfig, ReoptConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub density: DensityConfig,
    pub reopt: ReoptConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    /// Where `run` and `compare` write artifacts; `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seeds: Seeds,
    #[serde(default = "default_members")]
    pub ensemble_members: usize,
}

fn default_members() -> usize {
    4
}

/// Every random stream in an experiment derives from these two values.
/// Seed fields nested in `train`, `reopt` and a flow density are replaced
/// by `model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: SetSource,
    #[serde(default)]
    pub iid_test: Option<SetSource>,
    /// All five intensities are generated from the iid test set.
    #[serde(default)]
    pub shift: Option<ShiftConfig>,
    #[serde(default)]
    pub ood: Option<OodConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSource {
    TwoMoons {
        n_per_class: usize,
        noise_sd: f64,
    },
    TwoOvals {
        n_per_class: usize,
        separation: f64,
        noise_sd: f64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub kind: ShiftKind,
    #[serde(default = "default_scales")]
    pub scales: [f64; 5],
}

fn default_scales() -> [f64; 5] {
    DEFAULT_NOISE_SCALES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub n: usize,
    /// Explicit cluster center; otherwise placed `distance_sd` pooled
    /// training standard deviations from the training centroid.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default = "default_distance")]
    pub distance_sd: f64,
    #[serde(default = "default_direction")]
    pub direction: Vec<f64>,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_distance() -> f64 {
    DEFAULT_OOD_DISTANCE_SD
}

fn default_direction() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_spread() -> f64 {
    0.25
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::Config(e.into_inner().to_string())
            } else {
                CliError::Config(format!("{path}: {}", e.into_inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_json(&text)?;
        // csv paths are relative to the config file
        if let Some(dir) = path.parent() {
            cfg.dataset.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: density_softmax::Error| CliError::Config(format!("{name}: {e}"));
        self.encoder.validate().map_err(|e| field("encoder", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        if self.reopt.batch_size == 0 {
            return Err(CliError::Config("reopt.batch_size: must be at least 1".into()));
        }
        if !(self.reopt.lr > 0.0) {
            return Err(CliError::Config("reopt.lr: must be positive".into()));
        }
        if self.metrics.bins == 0 {
            return Err(CliError::Config("metrics.bins: must be at least 1".into()));
        }
        if self.ensemble_members < 2 {
            return Err(CliError::Config("ensemble_members: must be at least 2".into()));
        }
        if self.dataset.shift.is_some() && self.dataset.iid_test.is_none() {
            return Err(CliError::Config(
                "dataset.shift: shifted sets are derived from dataset.iid_test, which is missing".into(),
            ));
        }
        if let Some(s) = &self.dataset.shift {
            ShiftSpec::new(s.kind, 1, s.scales).map_err(|e| field("dataset.shift", e))?;
        }
        Ok(())
    }

    /// Pipeline settings with every nested seed taken from `seeds.model`.
    pub fn pipeline(&self) -> PipelineConfig {
        let seed = self.seeds.model;
        let mut density = self.density.clone();
        if let DensityConfig::Flow(f) = &mut density {
            f.seed = seed;
        }
        PipelineConfig {
            encoder: self.encoder.clone(),
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
            density,
            reopt: ReoptConfig {
                seed,
                ..self.reopt.clone()
            },
            init_seed: seed,
            scale_batch_size: 128,
        }
    }
}

impl DatasetConfig {
    fn rebase(&mut self, dir: &Path) {
        for src in [Some(&mut self.train), self.iid_test.as_mut()].into_iter().flatten() {
            if let SetSource::Csv { path } = src {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        }
    }
}

impl SetSource {
    fn build(&self, seed: u64, domain: Domain) -> CliResult<LabeledSet> {
        let set = match self {
            SetSource::TwoMoons {
                n_per_class,
                noise_sd,
            } => make_two_moons(*n_per_class, *noise_sd, seed)?,
            SetSource::TwoOvals {
                n_per_class,
                separation,
                noise_sd,
            } => make_two_ovals(*n_per_class, *separation, *noise_sd, seed)?,
            SetSource::Csv { path } => {
                let set = load_csv(path)?;
                if set.domain != domain {
                    return Err(CliError::Config(format!(
                        "{} holds a {} set, expected {}",
                        path.display(),
                        set.domain,
                        domain
                    )));
                }
                return Ok(set);
            }
        };
        Ok(match domain {
            Domain::IidTest => as_iid_test(set),
            _ => set,
        })
    }
}

/// The sets one experiment trains and evaluates on.
#[derive(Debug, Clone)]
pub struct DataSets {
    pub train: LabeledSet,
    pub iid_test: Option<LabeledSet>,
    /// Intensities 1..=5 in order.
    pub shifted: Vec<LabeledSet>,
    pub ood: Option<LabeledSet>,
}

/// Per-set seeds: train `data`, iid test `data + 1`, OOD `data + 2`,
/// shift intensity `i` at `data + 10 + i`.
pub fn build_sets(cfg: &DatasetConfig, data_seed: u64) -> CliResult<DataSets> {
    let train = cfg.train.build(data_seed, Domain::Train)?;
    let iid_test = cfg
        .iid_test
        .as_ref()
        .map(|s| s.build(data_seed.wrapping_add(1), Domain::IidTest))
        .transpose()?;
    let mut shifted = Vec::new();
    if let (Some(shift), Some(test)) = (&cfg.shift, &iid_test) {
        for i in 1..=5u8 {
            let spec = ShiftSpec::new(shift.kind, i, shift.scales)?;
            shifted.push(apply_shift(test, &spec, data_seed.wrapping_add(10 + i as u64))?);
        }
    }
    let ood = match &cfg.ood {
        Some(o) => {
            let center = match &o.center {
                Some(c) => c.clone(),
                None => default_ood_center(&train.features, o.distance_sd, &o.direction)?,
            };
            Some(make_ood_cluster(o.n, &center, o.spread, data_seed.wrapping_add(2))?)
        }
        None => None,
    };
    Ok(DataSets {
        train,
        iid_test,
        shifted,
        ood,
    })
}

impl DataSets {
    pub fn all(&self) -> impl Iterator<Item = &LabeledSet> {
        std::iter::once(&self.train)
            .chain(self.iid_test.iter())
            .chain(self.shifted.iter())
            .chain(self.ood.iter())
    }

    /// Sets whose labels are meaningful for calibration metrics.
    pub fn labeled(&self) -> impl Iterator<Item = &LabeledSet> {
        self.all().filter(|s| s.domain != Domain::Ood)
    }

    pub fn get(&self, tag: &str) -> CliResult<&LabeledSet> {
        let domain: Domain = tag
            .parse()
            .map_err(|_| CliError::Config(format!("unknown set tag `{tag}`")))?;
        self.all()
            .find(|s| s.domain == domain)
            .ok_or_else(|| CliError::Config(format!("set `{tag}` is not available")))
    }

    /// Writes `<tag>.csv` per set.
    pub fn save_dir(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let mut written = Vec::new();
        for set in self.all() {
            let path = dir.join(format!("{}.csv", set.domain.tag()));
            save_csv(set, &path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Reads whatever `<tag>.csv` files exist; `train.csv` is required.
    pub fn load_dir(dir: &Path) -> CliResult<Self> {
        let read = |tag: &str| -> CliResult<Option<LabeledSet>> {
            let path = dir.join(format!("{tag}.csv"));
            if path.exists() {
                Ok(Some(load_csv(&path)?))
            } else {
                Ok(None)
            }
        };
        let train = read("train")?.ok_or_else(|| {
            CliError::Config(format!("{} has no train.csv", dir.display()))
        })?;
        let mut shifted = Vec::new();
        for i in 1..=5 {
            if let Some(s) = read(&format!("shifted{i}"))? {
                shifted.push(s);
            }
        }
        Ok(DataSets {
            train,
            iid_test: read("iid_test")?,
            shifted,
            ood: read("ood")?,
        })
    }
}
