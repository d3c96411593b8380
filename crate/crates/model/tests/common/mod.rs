#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermofuse_core::dataset::{DatasetManifest, FusedSample, SampleRecord};
use thermofuse_core::raster::ImageTensor;
use thermofuse_core::{Grade, Modality};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise in [0, 1] shaped for `modality` at `size` x `size`.
pub fn noise_sample(modality: Modality, size: usize, grade: u8, rng: &mut ChaCha8Rng) -> FusedSample {
    let c = modality.channels();
    let data = (0..c * size * size).map(|_| rng.random::<f32>()).collect();
    FusedSample {
        tensor: ImageTensor::from_vec(c, size, size, data).unwrap(),
        label: Grade::new(grade).unwrap(),
        modality,
    }
}

/// A constant image whose brightness encodes the grade, with a little noise.
pub fn level_sample(modality: Modality, size: usize, grade: u8, rng: &mut ChaCha8Rng) -> FusedSample {
    let c = modality.channels();
    let level = 0.1 + 0.15 * grade as f32;
    let data = (0..c * size * size)
        .map(|_| (level + 0.02 * (rng.random::<f32>() - 0.5)).clamp(0.0, 1.0))
        .collect();
    FusedSample {
        tensor: ImageTensor::from_vec(c, size, size, data).unwrap(),
        label: Grade::new(grade).unwrap(),
        modality,
    }
}

/// Manifest of `per_class` fake records per grade; paths are never opened.
pub fn fake_manifest(per_class: usize) -> DatasetManifest {
    let records = (0..6u8)
        .flat_map(|g| {
            (0..per_class).map(move |i| SampleRecord {
                id: format!("g{g}_{i:03}"),
                rgb_path: format!("rgb/g{g}_{i:03}.png").into(),
                thermal_raw_path: Some(format!("thermal/g{g}_{i:03}.tiff").into()),
                grade: Grade::new(g).unwrap(),
                thermal_valid: true,
            })
        })
        .collect();
    DatasetManifest::from_records(records).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
