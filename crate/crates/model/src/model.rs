//! Backbone plus classification head, assembled for one input modality.

use std::ops::Range;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::FusedSample;
use thermofuse_core::{Modality, NUM_CLASSES};

use crate::backbone::{BackboneId, BackboneSpec, Stage};
use crate::error::{ModelError, Result};
use crate::inflate::{inflate_input_layer, InflationMode};
use crate::layers::{Activation, BatchNorm, Ctx, Dropout, Linear};
use crate::store::{Builder, Group, ParamStore};

/// Widths of the two hidden head layers.
pub const HEAD_HIDDEN: [usize; 2] = [1024, 512];
pub const HEAD_DROPOUT: f64 = 0.5;

/// Head size for a backbone emitting `feature_dim` features.
pub fn head_param_count(feature_dim: usize) -> u64 {
    let [h1, h2] = HEAD_HIDDEN.map(|h| h as u64);
    let d = feature_dim as u64;
    let linear = |i: u64, o: u64| i * o + o;
    linear(d, h1) + 2 * h1 + linear(h1, h2) + 2 * h2 + linear(h2, NUM_CLASSES as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Seeded random initialisation of the whole network.
    Random { seed: u64 },
    /// Backbone tensors from a safetensors file with torchvision names; the head stays random (seed 0).
    Pretrained { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOptions {
    pub weights: WeightSource,
    pub inflation: InflationMode,
    pub dtype: DType,
    /// Overrides the backbone's native input resolution.
    pub input_size: Option<usize>,
    /// Starts the output layer at zero, so every input gets uniform probabilities.
    pub zero_final: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            weights: WeightSource::Random { seed: 0 },
            inflation: InflationMode::MeanRgb,
            dtype: DType::F32,
            input_size: None,
            zero_final: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub backbone: u64,
    pub head: u64,
}

impl ParamCounts {
    pub fn total(&self) -> u64 {
        self.backbone + self.head
    }
}

pub struct Model {
    spec: BackboneSpec,
    modality: Modality,
    input_size: usize,
    store: ParamStore,
    stages: Vec<Stage>,
    head_start: usize,
}

fn build_head(b: &Builder, feature_dim: usize, zero_final: bool) -> Result<Vec<Stage>> {
    let h = b.pp("head");
    let [h1, h2] = HEAD_HIDDEN;
    let last = if zero_final {
        Linear::zeros(&h.pp(8), h2, NUM_CLASSES)?
    } else {
        Linear::new(&h.pp(8), h2, NUM_CLASSES)?
    };
    Ok(vec![
        Stage::new("head.0", Linear::new(&h.pp(0), feature_dim, h1)?),
        Stage::new("head.1", Activation::Relu),
        Stage::new("head.2", BatchNorm::new(&h.pp(2), h1, 1e-5)?),
        Stage::new("head.3", Dropout(HEAD_DROPOUT)),
        Stage::new("head.4", Linear::new(&h.pp(4), h1, h2)?),
        Stage::new("head.5", Activation::Relu),
        Stage::new("head.6", BatchNorm::new(&h.pp(6), h2, 1e-5)?),
        Stage::new("head.7", Dropout(HEAD_DROPOUT)),
        Stage::new("head.8", last),
    ])
}

/// Assembles backbone (widened to four input channels for fused data) and head.
pub fn build_model(backbone: BackboneId, modality: Modality, options: &ModelOptions) -> Result<Model> {
    let spec = backbone.spec();
    let seed = match &options.weights {
        WeightSource::Random { seed } => *seed,
        WeightSource::Pretrained { path } if !path.is_file() => {
            return Err(ModelError::WeightsUnavailable(path.clone()));
        }
        WeightSource::Pretrained { .. } => 0,
    };
    let b = Builder::new(seed, options.dtype, &Device::Cpu);
    let c_in = modality.channels();
    if c_in == 4 {
        b.inflate(spec.first_conv, options.inflation);
    }
    let mut stages = backbone.build(&b, c_in)?;
    let head_start = stages.len();
    stages.extend(build_head(
        &b.with_group(Group::Head),
        spec.feature_dim,
        options.zero_final,
    )?);
    let store = b.finish();

    if let WeightSource::Pretrained { path } = &options.weights {
        let mut tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        if c_in == 4 {
            if let Some(w) = tensors.get(spec.first_conv) {
                if w.dim(1)? == 3 {
                    let wide = inflate_input_layer(w, options.inflation)?;
                    tensors.insert(spec.first_conv.to_string(), wide);
                }
            }
        }
        if let Some(missing) = store
            .entries()
            .iter()
            .find(|e| e.group == Group::Backbone && !tensors.contains_key(&e.name))
        {
            return Err(ModelError::Checkpoint(format!(
                "pretrained file lacks `{}`",
                missing.name
            )));
        }
        store.restore(&tensors, true)?;
    }

    Ok(Model {
        spec,
        modality,
        input_size: options.input_size.unwrap_or(spec.input_size),
        store,
        stages,
        head_start,
    })
}

/// Trainable parameters on each side of the backbone/head boundary.
pub fn count_params(model: &Model) -> ParamCounts {
    model.param_counts()
}

/// Class probabilities for one sample in inference mode.
pub fn predict(model: &Model, sample: &FusedSample) -> Result<[f64; NUM_CLASSES]> {
    Ok(model.predict_batch(&[sample])?[0])
}

impl Model {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn backbone(&self) -> BackboneId {
        self.spec.id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            backbone: self.store.count(Group::Backbone),
            head: self.store.count(Group::Head),
        }
    }

    pub fn stage_names(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().map(|s| s.name.as_str())
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Index of the first head stage.
    pub fn head_start(&self) -> usize {
        self.head_start
    }

    /// Channels, height and width of a valid input.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.modality.channels(), self.input_size, self.input_size)
    }

    /// Stacks samples into an `(N, C, H, W)` tensor of the model's dtype.
    pub fn to_input(&self, samples: &[&FusedSample]) -> Result<Tensor> {
        let (c, h, w) = self.input_shape();
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            if s.tensor.shape() != (c, h, w) {
                return Err(ModelError::ShapeMismatch {
                    expected: (c, h, w),
                    found: s.tensor.shape(),
                });
            }
            data.extend_from_slice(s.tensor.data());
        }
        Ok(Tensor::from_vec(data, (samples.len(), c, h, w), &Device::Cpu)?.to_dtype(self.store.dtype())?)
    }

    /// Runs stages `range` on `x`.
    pub fn forward_stages(&self, x: &Tensor, range: Range<usize>, ctx: &mut Ctx) -> Result<Tensor> {
        let mut x = x.clone();
        for stage in &self.stages[range] {
            x = stage.layer.forward(&x, ctx)?;
        }
        Ok(x)
    }

    /// Logits for a batch.
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.forward_stages(x, 0..self.stages.len(), ctx)
    }

    /// Backbone features for a batch.
    pub fn features(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.forward_stages(x, 0..self.head_start, ctx)
    }

    pub fn predict_batch(&self, samples: &[&FusedSample]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.to_input(samples)?;
        let logits = self.forward(&x, &mut Ctx::eval())?;
        let probs = candle_nn::ops::softmax_last_dim(&logits.to_dtype(DType::F64)?)?;
        Ok(probs
            .to_vec2::<f64>()?
            .into_iter()
            .map(|row| {
                let mut p = [0.0; NUM_CLASSES];
                p.copy_from_slice(&row);
                p
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.load(path)
    }
}
