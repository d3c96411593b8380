//! Turning manifest records into model-ready tensors.

use std::path::PathBuf;

use thiserror::Error;

use super::{Grade, Modality, SampleRecord};
use crate::raster::ImageTensor;
use crate::thermal::{self, ThermalError, WindowParams};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("cannot read RGB image {path}: {source}")]
    Rgb { path: PathBuf, source: image::ImageError },
    #[error("sample `{0}` has no usable thermal frame")]
    NoThermal(String),
    #[error("thermal frame {path}: {source}")]
    Thermal { path: PathBuf, source: ThermalError },
    #[error("expected {expected} channels for {modality}, got {got}")]
    Channels {
        modality: Modality,
        expected: usize,
        got: usize,
    },
}

/// One network input: a square CHW tensor in [0, 1] plus its grade.
///
/// Channels are RGB for [`Modality::Rgb`], the normalized thermal plane three
/// times for [`Modality::Thermal`], and RGB followed by thermal for
/// [`Modality::Fused`].
#[derive(Clone, Debug, PartialEq)]
pub struct FusedSample {
    pub tensor: ImageTensor,
    pub label: Grade,
    pub modality: Modality,
}

/// Loads and resizes both modalities to `input_size` x `input_size`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleBuilder {
    pub input_size: usize,
    pub window: WindowParams,
}

impl SampleBuilder {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            window: WindowParams::default(),
        }
    }

    pub fn load_rgb(&self, record: &SampleRecord) -> Result<ImageTensor, SampleError> {
        let img = image::open(&record.rgb_path).map_err(|source| SampleError::Rgb {
            path: record.rgb_path.clone(),
            source,
        })?;
        Ok(ImageTensor::from_rgb8(&img.to_rgb8()))
    }

    /// Normalized thermal plane at native resolution.
    pub fn load_thermal(&self, record: &SampleRecord) -> Result<ImageTensor, SampleError> {
        let path = match (&record.thermal_raw_path, record.thermal_valid) {
            (Some(p), true) => p,
            _ => return Err(SampleError::NoThermal(record.id.clone())),
        };
        let frame = thermal::read_raw(path).map_err(|source| SampleError::Thermal {
            path: path.clone(),
            source,
        })?;
        let (_, _, normalized) = thermal::process_frame(&frame, &self.window);
        let (h, w) = (normalized.height(), normalized.width());
        Ok(ImageTensor::from_planes(h, w, &[normalized.values()]).expect("plane matches frame"))
    }

    pub fn build(&self, record: &SampleRecord, modality: Modality) -> Result<FusedSample, SampleError> {
        let rgb = match modality {
            Modality::Rgb | Modality::Fused => Some(self.load_rgb(record)?),
            Modality::Thermal => None,
        };
        let thermal = match modality {
            Modality::Thermal | Modality::Fused => Some(self.load_thermal(record)?),
            Modality::Rgb => None,
        };
        self.from_parts(rgb.as_ref(), thermal.as_ref(), record.grade, modality)
    }

    /// Assembles a sample from already decoded planes of any size.
    pub fn from_parts(
        &self,
        rgb: Option<&ImageTensor>,
        thermal: Option<&ImageTensor>,
        label: Grade,
        modality: Modality,
    ) -> Result<FusedSample, SampleError> {
        let n = self.input_size;
        let check = |t: Option<&ImageTensor>, expected: usize| match t {
            Some(t) if t.channels() == expected => Ok(t.resize(n, n)),
            other => Err(SampleError::Channels {
                modality,
                expected,
                got: other.map_or(0, ImageTensor::channels),
            }),
        };
        let tensor = match modality {
            Modality::Rgb => check(rgb, 3)?,
            Modality::Thermal => {
                let t = check(thermal, 1)?;
                let plane = t.channel(0);
                ImageTensor::from_planes(n, n, &[plane, plane, plane]).expect("square planes")
            }
            Modality::Fused => {
                let r = check(rgb, 3)?;
                let t = check(thermal, 1)?;
                ImageTensor::from_planes(n, n, &[r.channel(0), r.channel(1), r.channel(2), t.channel(0)])
                    .expect("square planes")
            }
        };
        Ok(FusedSample {
            tensor,
            label,
            modality,
        })
    }
}
