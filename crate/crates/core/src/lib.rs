//! Data-side building blocks for RGB + thermal diabetic foot ulcer staging.
//!
//! * [`thermal`] decodes radiometric frames, converts counts to Celsius, picks an
//!   adaptive temperature window and normalizes the thermal channel.
//! * [`dataset`] owns the sample manifest, the stratified test/fold split, class
//!   weights, sample assembly and augmentation.
//! * [`metrics`] turns predictions into confusion matrices and the reported scalars.
//! * [`synth`] generates deterministic synthetic datasets with known class structure.
//! * [`bench`] times single-image inference.
//!
//! Everything here is independent of the deep learning backend; the model crate
//! consumes [`dataset::FusedSample`] values produced by this crate.

pub mod bench;
pub mod dataset;
pub mod metrics;
pub mod raster;
pub mod synth;
pub mod thermal;

pub use dataset::{Grade, Modality, NUM_CLASSES};
