//! Pipeline configuration: one JSON document, strict about unknown keys, validated on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud_filter::{CloudClassifierSpec, CloudMethod};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::pix2pix_net::{DiscriminatorSpec, GeneratorSpec, ModelSpec};
use crate::preprocess::PreprocessConfig;
use crate::quality_metrics::SsimParams;
use crate::tile_store::BitDepth;
use crate::trainer::TrainSpec;

/// Training-loop settings; the loss weights live in their own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub d_update_cadence_epochs: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainSpec::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            d_update_cadence_epochs: t.d_update_cadence_epochs,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudConfig {
    pub method: CloudMethod,
    pub threshold: f64,
    pub classifier: CloudClassifierSpec,
    /// Classifier directory for the `cnn` method.
    pub weights: Option<PathBuf>,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            method: CloudMethod::Heuristic,
            threshold: 0.5,
            classifier: CloudClassifierSpec::default(),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub candidates: usize,
    pub output_bit_depth: BitDepth,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            candidates: 3,
            output_bit_depth: BitDepth::U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub train: u64,
    pub inference: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { train: 0, inference: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory relative manifest paths resolve against, when not the manifest's own.
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub preprocess: PreprocessConfig,
    pub ssim: SsimParams,
    pub cloud: CloudConfig,
    pub inference: InferenceConfig,
    pub seeds: Seeds,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn model(&self) -> ModelSpec {
        ModelSpec {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        let t = &self.train;
        TrainSpec {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            d_update_cadence_epochs: t.d_update_cadence_epochs,
            seed: self.seeds.train,
            checkpoint_every: t.checkpoint_every,
            loss: self.loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train_spec().validate()?;
        self.preprocess.validate()?;
        self.ssim.validate()?;
        self.cloud.classifier.validate()?;
        if !(0.0..=1.0).contains(&self.cloud.threshold) {
            return Err(Error::config("cloud.threshold", format!("{} not in [0, 1]", self.cloud.threshold)));
        }
        if self.inference.candidates == 0 {
            return Err(Error::config("inference.candidates", "must be at least 1"));
        }
        Ok(())
    }

    /// Parses and validates a JSON document; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            let key = match unknown_field(&msg) {
                Some(f) if path == "." => f.to_string(),
                _ => path,
            };
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective configuration to `dir/effective_config.json`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

fn unknown_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    PipelineConfig::from_json(&text)
}
