//! The run configuration, a TOML document with one table per pipeline stage.
//!
//! Every key is optional. Unknown keys are rejected so that typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::{AugmentationConfig, NUM_FOLDS};
use thermofuse_core::synth::SynthSpec;
use thermofuse_core::thermal::WindowParams;
use thermofuse_core::Modality;
use thermofuse_model::train::{OptimizerId, TrainConfig};
use thermofuse_model::{BackboneId, InflationMode, ModelOptions, WeightSource};

/// Environment variable that replaces every seed in the configuration.
pub const SEED_ENV: &str = "THERMOFUSE_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub synth: SynthSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThermalFormat {
    /// 32-bit float TIFF holding values in [0, 1].
    #[default]
    Tiff,
    /// 16-bit grayscale PNG holding `round(value * 65535)`.
    Png16,
}

impl ThermalFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ThermalFormat::Tiff => "tiff",
            ThermalFormat::Png16 => "png",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Sample manifest; `<out>/synth/manifest.csv` when absent.
    pub manifest: Option<PathBuf>,
    /// Raw thermal TIFFs for `convert`; `<out>/synth/thermal` when absent.
    pub input_dir: Option<PathBuf>,
    pub format: ThermalFormat,
    pub window: WindowParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneId,
    pub modality: Modality,
    pub inflation: InflationMode,
    /// Safetensors file with torchvision-named backbone weights.
    pub weights: Option<PathBuf>,
    /// Square input side; the backbone's native size when absent.
    pub input_size: Option<usize>,
    /// Backbones and modalities crossed by `matrix`.
    pub sweep_backbones: Vec<BackboneId>,
    pub sweep_modalities: Vec<Modality>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneId::MiniVgg,
            modality: Modality::Fused,
            inflation: InflationMode::MeanRgb,
            weights: None,
            input_size: None,
            sweep_backbones: BackboneId::PUBLISHED.to_vec(),
            sweep_modalities: Modality::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerId,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub freeze_backbone: bool,
    pub recalibrate_bn: bool,
    /// Validation folds to run, each in 1..=5.
    pub folds: Vec<usize>,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            weight_decay: t.weight_decay,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            freeze_backbone: t.freeze_backbone,
            recalibrate_bn: t.recalibrate_bn,
            folds: (1..=NUM_FOLDS).collect(),
            augmentation: t.augmentation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fold whose checkpoint `gradcam` explains.
    pub fold: usize,
    /// Sample ids to explain; the first `count` test ids when empty.
    pub samples: Vec<String>,
    pub count: usize,
    /// Grade to explain; each sample's own grade when absent.
    pub target_class: Option<u8>,
    /// Stage to explain; the backbone's default when absent.
    pub layer: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fold: 1,
            samples: Vec::new(),
            count: 10,
            target_class: None,
            layer: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iterations: usize,
    pub backbones: Vec<BackboneId>,
    pub modalities: Vec<Modality>,
    pub input_size: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: thermofuse_core::bench::DEFAULT_WARMUP,
            iterations: thermofuse_core::bench::DEFAULT_ITERATIONS,
            backbones: BackboneId::PUBLISHED.to_vec(),
            modalities: Modality::ALL.to_vec(),
            input_size: None,
        }
    }
}

/// Values given on the command line or in the environment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backbone: Option<BackboneId>,
    pub modality: Option<Modality>,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Applies command-line values; a seed replaces every seed in the document.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.split.seed = seed;
            self.train.seed = seed;
            self.synth.seed = seed;
        }
        if let Some(b) = o.backbone {
            self.model.backbone = b;
        }
        if let Some(m) = o.modality {
            self.model.modality = m;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.data.window.validate()?;
        self.synth.validate()?;
        if self.train.folds.is_empty() {
            anyhow::bail!("train.folds is empty");
        }
        for (i, f) in self.train.folds.iter().enumerate() {
            if !(1..=NUM_FOLDS).contains(f) {
                anyhow::bail!("train.folds contains {f}, folds run from 1 to {NUM_FOLDS}");
            }
            if self.train.folds[..i].contains(f) {
                anyhow::bail!("train.folds lists fold {f} twice");
            }
        }
        if let Some(g) = self.eval.target_class {
            if thermofuse_core::Grade::new(g).is_none() {
                anyhow::bail!("eval.target_class {g} is not a grade");
            }
        }
        Ok(())
    }

    pub fn input_size(&self, backbone: BackboneId) -> usize {
        self.model.input_size.unwrap_or(backbone.spec().input_size)
    }

    pub fn model_options(&self, backbone: BackboneId) -> ModelOptions {
        ModelOptions {
            weights: match &self.model.weights {
                Some(path) => WeightSource::Pretrained { path: path.clone() },
                None => WeightSource::Random { seed: self.train.seed },
            },
            inflation: self.model.inflation,
            input_size: Some(self.input_size(backbone)),
            ..ModelOptions::default()
        }
    }

    pub fn train_config(&self, backbone: BackboneId, modality: Modality) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            backbone,
            modality,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            weight_decay: t.weight_decay,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            inflation_mode: self.model.inflation,
            freeze_backbone: t.freeze_backbone,
            input_size: Some(self.input_size(backbone)),
            recalibrate_bn: t.recalibrate_bn,
            augmentation: t.augmentation,
        }
    }
}

/// Seed from [`SEED_ENV`], if set.
pub fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v} is not a seed"))?,
        )),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::parse("[nonsense]\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs = 3\n").is_ok());
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut cfg = RunConfig::parse("[split]\nseed = 4\n[train]\nseed = 5\n[synth]\nseed = 6\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!((cfg.split.seed, cfg.train.seed, cfg.synth.seed), (9, 9, 9));
    }

    #[test]
    fn shipped_configs_parse() {
        let desk = RunConfig::parse(include_str!("../../../configs/desk.toml")).unwrap();
        desk.validate().unwrap();
        assert_eq!(desk.model.backbone, BackboneId::MiniVgg);

        let readme = include_str!("../../../README.md");
        let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        RunConfig::parse(block).unwrap().validate().unwrap();
    }

    #[test]
    fn folds_are_checked() {
        let mut cfg = RunConfig::default();
        cfg.train.folds = vec![1, 6];
        assert!(cfg.validate().is_err());
        cfg.train.folds = vec![2, 2];
        assert!(cfg.validate().is_err());
        cfg.train.folds = vec![3];
        assert!(cfg.validate().is_ok());
    }
}
