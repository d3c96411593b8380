//! One cross-validation fold of class-weighted training with early stopping.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::{
    augment, AugmentationConfig, ClassWeights, DatasetManifest, FusedSample, SampleBuilder, SplitPlan, NUM_FOLDS,
};
use thermofuse_core::{Modality, NUM_CLASSES};

use crate::backbone::BackboneId;
use crate::error::{ModelError, Result};
use crate::inflate::InflationMode;
use crate::layers::{weighted_cross_entropy, Ctx};
use crate::model::Model;
use crate::store::Group;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerId {
    #[default]
    Adam,
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: BackboneId,
    pub modality: Modality,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerId,
    /// Decoupled weight decay, used by `adamw` only.
    pub weight_decay: f64,
    /// Epochs without a new best validation loss before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub inflation_mode: InflationMode,
    pub freeze_backbone: bool,
    /// Square input side; the backbone's native size when absent.
    pub input_size: Option<usize>,
    /// Re-estimate normalisation statistics on clean training data before each validation.
    pub recalibrate_bn: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneId::Vgg16,
            modality: Modality::Fused,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerId::Adam,
            weight_decay: 0.01,
            early_stop_patience: 10,
            seed: 0,
            inflation_mode: InflationMode::MeanRgb,
            freeze_backbone: false,
            input_size: None,
            recalibrate_bn: true,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn input_size(&self) -> usize {
        self.input_size.unwrap_or(self.backbone.spec().input_size)
    }
}

/// Samples by id, loaded from disk on first use or supplied in memory.
pub struct SampleSource {
    modality: Modality,
    disk: Option<(DatasetManifest, SampleBuilder)>,
    cache: Mutex<HashMap<String, Arc<FusedSample>>>,
}

impl SampleSource {
    pub fn new(manifest: DatasetManifest, modality: Modality, input_size: usize) -> Self {
        Self::with_builder(manifest, modality, SampleBuilder::new(input_size))
    }

    /// Like [`SampleSource::new`] with a custom loader, e.g. for other window parameters.
    pub fn with_builder(manifest: DatasetManifest, modality: Modality, builder: SampleBuilder) -> Self {
        Self {
            modality,
            disk: Some((manifest, builder)),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn in_memory(modality: Modality, samples: impl IntoIterator<Item = (String, FusedSample)>) -> Self {
        let cache = samples.into_iter().map(|(id, s)| (id, Arc::new(s))).collect();
        Self {
            modality,
            disk: None,
            cache: Mutex::new(cache),
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn get(&self, id: &str) -> Result<Arc<FusedSample>> {
        if let Some(s) = self.cache.lock().expect("sample cache poisoned").get(id) {
            return Ok(s.clone());
        }
        let (manifest, builder) = self
            .disk
            .as_ref()
            .ok_or_else(|| ModelError::Checkpoint(format!("no sample `{id}` in memory")))?;
        let record = manifest
            .get(id)
            .ok_or_else(|| ModelError::Checkpoint(format!("sample `{id}` not in manifest")))?;
        let sample = Arc::new(
            builder
                .build(record, self.modality)
                .map_err(|source| ModelError::Sample {
                    id: id.to_string(),
                    source,
                })?,
        );
        self.cache
            .lock()
            .expect("sample cache poisoned")
            .insert(id.to_string(), sample.clone());
        Ok(sample)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub struct TrainedRun {
    /// Carries the weights of the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub fold: usize,
    pub config: TrainConfig,
    /// Every id that appeared in a training batch.
    pub seen_ids: BTreeSet<String>,
}

impl TrainedRun {
    pub fn write_history(&self, path: impl AsRef<Path>) -> Result<()> {
        write_history(&self.history, path)
    }
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss,val_acc")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_acc)?;
    }
    f.flush()?;
    Ok(())
}

/// Model outputs for a list of ids.
pub struct Predictions {
    pub ids: Vec<String>,
    pub truth: Vec<usize>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
}

impl Predictions {
    pub fn predicted(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| (0..NUM_CLASSES).fold(0, |best, c| if p[c] > p[best] { c } else { best }))
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self.predicted().iter().zip(&self.truth).filter(|(p, t)| p == t).count();
        hits as f64 / self.truth.len().max(1) as f64
    }
}

const EVAL_BATCH: usize = 64;

/// Inference-mode probabilities for `ids`, in order.
pub fn predict_ids(model: &Model, source: &SampleSource, ids: &[&str]) -> Result<Predictions> {
    let mut probs = Vec::with_capacity(ids.len());
    let mut truth = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(EVAL_BATCH) {
        let samples = chunk.iter().map(|id| source.get(id)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FusedSample> = samples.iter().map(|s| s.as_ref()).collect();
        probs.extend(model.predict_batch(&refs)?);
        truth.extend(samples.iter().map(|s| s.label.index()));
    }
    Ok(Predictions {
        ids: ids.iter().map(|s| s.to_string()).collect(),
        truth,
        probs,
    })
}

fn labels_tensor(samples: &[Arc<FusedSample>]) -> Result<Tensor> {
    let labels: Vec<u32> = samples.iter().map(|s| s.label.index() as u32).collect();
    Ok(Tensor::new(labels, &Device::Cpu)?)
}

/// Weighted loss and accuracy on `ids` in inference mode.
fn validate(model: &Model, source: &SampleSource, ids: &[&str], weights: &Tensor) -> Result<(f64, f64)> {
    let (mut loss, mut hits) = (0.0, 0usize);
    for chunk in ids.chunks(EVAL_BATCH) {
        let samples = chunk.iter().map(|id| source.get(id)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FusedSample> = samples.iter().map(|s| s.as_ref()).collect();
        let logits = model.forward(&model.to_input(&refs)?, &mut Ctx::eval())?;
        let labels = labels_tensor(&samples)?;
        let l = weighted_cross_entropy(&logits, &labels, weights)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?;
        loss += l * chunk.len() as f64;
        let pred = logits.argmax(1)?.to_vec1::<u32>()?;
        hits += pred
            .iter()
            .zip(&samples)
            .filter(|(p, s)| **p as usize == s.label.index())
            .count();
    }
    Ok((loss / ids.len() as f64, hits as f64 / ids.len() as f64))
}

/// Replaces running normalisation statistics with their average over batches
/// of `ids` at the current weights, dropout off and no augmentation.
///
/// `ids` should be shuffled: batches drawn from a single class understate the variance.
///
/// Running averages collected during training lag the weights and, behind
/// dropout, see a wider activation spread than inference does.
pub fn recalibrate(model: &Model, source: &SampleSource, ids: &[&str], batch: usize) -> Result<()> {
    let batches = ids.chunks(batch.max(2)).filter(|c| c.len() >= 2);
    for (k, chunk) in batches.enumerate() {
        let samples = chunk.iter().map(|id| source.get(id)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FusedSample> = samples.iter().map(|s| s.as_ref()).collect();
        let x = model.to_input(&refs)?;
        model.forward(&x, &mut Ctx::calibrate(1.0 / (k + 1) as f64))?;
    }
    Ok(())
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains on the four folds other than `fold` and validates on `fold`.
///
/// Test ids never enter a batch; the loader fails with
/// [`ModelError::LeakageDetected`] if one would. The returned model holds the
/// weights of the epoch with the lowest validation loss.
pub fn train(
    model: Model,
    source: &SampleSource,
    split: &SplitPlan,
    fold: usize,
    weights: &ClassWeights,
    config: &TrainConfig,
) -> Result<TrainedRun> {
    if !(1..=NUM_FOLDS).contains(&fold) {
        return Err(ModelError::BadFold(fold));
    }
    if model.modality() != source.modality() {
        return Err(ModelError::ModalityMismatch {
            model: model.modality(),
            data: source.modality(),
        });
    }
    let mut run = TrainedRun {
        model,
        history: Vec::new(),
        best_epoch: None,
        fold,
        config: config.clone(),
        seen_ids: BTreeSet::new(),
    };
    if config.epochs == 0 {
        return Ok(run);
    }
    let train_ids = split.train_ids(fold)?;
    let val_ids = split.validation_ids(fold)?;
    if train_ids.len() < 2 {
        return Err(ModelError::EmptySet("training"));
    }
    if val_ids.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }

    let model = &run.model;
    let dtype = model.store().dtype();
    let w = Tensor::new(&weights.0, &Device::Cpu)?.to_dtype(dtype)?;
    let vars = model.store().trainable(config.freeze_backbone.then_some(Group::Head));
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: match config.optimizer {
                OptimizerId::Adam => 0.0,
                OptimizerId::AdamW => config.weight_decay,
            },
            ..ParamsAdamW::default()
        },
    )?;

    let batch = config.batch_size.max(2);
    let mut best: Option<(f64, HashMap<String, Tensor>)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<&str> = train_ids.clone();
        order.shuffle(&mut stream(config.seed, 3 * epoch as u64));
        let mut aug_rng = stream(config.seed, 3 * epoch as u64 + 1);
        let mut ctx = Ctx::train(stream(config.seed, 3 * epoch as u64 + 2));

        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            // Batch statistics are undefined for one sample.
            if chunk.len() < 2 {
                continue;
            }
            let mut samples = Vec::with_capacity(chunk.len());
            for id in chunk {
                if split.is_test(id) {
                    return Err(ModelError::LeakageDetected(id.to_string()));
                }
                run.seen_ids.insert(id.to_string());
                let s = source.get(id)?;
                samples.push(Arc::new(augment(&s, &config.augmentation, &mut aug_rng)));
            }
            let refs: Vec<&FusedSample> = samples.iter().map(|s| s.as_ref()).collect();
            let logits = model.forward(&model.to_input(&refs)?, &mut ctx)?;
            let loss = weighted_cross_entropy(&logits, &labels_tensor(&samples)?, &w)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            opt.backward_step(&loss)?;
            total += value * chunk.len() as f64;
            seen += chunk.len();
        }

        if config.recalibrate_bn {
            recalibrate(model, source, &order, batch)?;
        }
        let (val_loss, val_acc) = validate(model, source, &val_ids, &w)?;
        if !val_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        run.history.push(EpochRecord {
            epoch,
            train_loss: total / seen.max(1) as f64,
            val_loss,
            val_acc,
        });
        log::info!(
            "fold {fold} epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_acc:.4}",
            total / seen.max(1) as f64
        );
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.store().snapshot()?));
            run.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
                break;
            }
        }
    }
    if let Some((_, snapshot)) = best {
        run.model.store().restore(&snapshot, false)?;
    }
    Ok(run)
}
