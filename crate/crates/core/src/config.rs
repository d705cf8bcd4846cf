//! Single TOML configuration for every stage. Every field has a default, so
//! an empty file reproduces the reference settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_JACCARD_CUTOFF;
use crate::postprocess::{Connectivity, GridSearchSpec};
use crate::preprocess::{BaseModel, NormalizationParams, ResizeTargets, Task};
use crate::raster::ThresholdPair;
use crate::tta::{InferenceSpec, TtaConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub resize: ResizeTargets,
    /// Encoder whose input normalization predictions use.
    pub base_model: BaseModel,
    pub normalization: NormalizationParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resize: ResizeTargets::default(),
            base_model: BaseModel::Resnet152,
            normalization: NormalizationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub connectivity: Connectivity,
    pub lesion_thresholds: ThresholdPair,
    pub attribute_thresholds: ThresholdPair,
    /// Multiply attribute maps by the lesion mask before thresholding.
    pub restrict_to_lesion: bool,
    pub lesion_grid: GridSearchSpec,
    pub attribute_grid: GridSearchSpec,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        let pair = ThresholdPair::new(0.8, 0.45).expect("valid defaults");
        Self {
            connectivity: Connectivity::Eight,
            lesion_thresholds: pair,
            attribute_thresholds: pair,
            restrict_to_lesion: true,
            lesion_grid: GridSearchSpec::lesion_default(),
            attribute_grid: GridSearchSpec::attribute_default(),
        }
    }
}

impl PostprocessConfig {
    pub fn thresholds(&self, task: Task) -> ThresholdPair {
        if task.is_attribute() {
            self.attribute_thresholds
        } else {
            self.lesion_thresholds
        }
    }

    pub fn grid(&self, task: Task) -> &GridSearchSpec {
        if task.is_attribute() {
            &self.attribute_grid
        } else {
            &self.lesion_grid
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Cross-validation models averaged per case.
    pub folds: u32,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub jaccard_cutoff: f64,
    /// Attribute masks are compared at this `(height, width)`.
    pub attribute_eval_size: (usize, usize),
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            jaccard_cutoff: DEFAULT_JACCARD_CUTOFF,
            attribute_eval_size: (256, 256),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsConfig {
    pub k: u32,
    pub stratify: bool,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self { k: 5, stratify: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Used when neither the command line nor the manifest supplies a seed.
    pub seed: Option<u64>,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub postprocess: PostprocessConfig,
    pub tta: TtaConfig,
    pub ensemble: EnsembleConfig,
    pub metrics: MetricsConfig,
    pub folds: FoldsConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (r, a) = (self.preprocess.resize.lesion, self.preprocess.resize.attribute);
        if r.0 == 0 || r.1 == 0 || a.0 == 0 || a.1 == 0 {
            return bad("preprocess.resize targets must be positive".into());
        }
        self.preprocess.normalization.validate()?;
        self.augment.validate()?;
        self.tta.validate()?;
        for (name, g) in [
            ("lesion_grid", &self.postprocess.lesion_grid),
            ("attribute_grid", &self.postprocess.attribute_grid),
        ] {
            g.pairs()
                .map_err(|e| Error::Config(format!("postprocess.{name}: {e}")))?;
            if !(0.0..=1.0).contains(&g.jaccard_cutoff) {
                return bad(format!("postprocess.{name}.jaccard_cutoff outside [0, 1]"));
            }
        }
        if self.ensemble.folds == 0 {
            return bad("ensemble.folds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.metrics.jaccard_cutoff) {
            return bad("metrics.jaccard_cutoff outside [0, 1]".into());
        }
        let (h, w) = self.metrics.attribute_eval_size;
        if h == 0 || w == 0 {
            return bad("metrics.attribute_eval_size must be positive".into());
        }
        if self.folds.k < 2 {
            return bad("folds.k must be at least 2".into());
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceSpec {
        InferenceSpec {
            scheme: self.preprocess.base_model.scheme(),
            params: self.preprocess.normalization,
            tta: self.tta.clone(),
        }
    }
}
