//! Classifiers for RGB, thermal and fused RGB + thermal foot images.
//!
//! Five ImageNet-style backbones are rebuilt on candle with torchvision tensor
//! names, plus a small VGG-like network for CPU-scale experiments. Each is
//! topped by the same 1024/512 head with six outputs. Fused input widens the
//! first convolution to four channels. [`train`] runs one cross-validation fold
//! with a class-weighted loss and [`gradcam`] explains predictions.

pub mod backbone;
pub mod error;
pub mod gradcam;
pub mod inflate;
pub mod layers;
pub mod model;
pub mod norm;
pub mod pool;
pub mod store;
pub mod train;
pub mod unfold;

pub use backbone::{BackboneId, BackboneSpec};
pub use error::{ModelError, Result};
pub use gradcam::{grad_cam, render_overlay, CamMap};
pub use inflate::{inflate_input_layer, InflationMode};
pub use model::{build_model, count_params, head_param_count, predict, Model, ModelOptions, ParamCounts, WeightSource};
pub use train::{train, SampleSource, TrainConfig, TrainedRun};
