//! Deterministic synthetic RGB + thermal datasets with planted class structure.
//!
//! Every sample shows an elliptical foot on a cool background in both
//! modalities, sharing one field of view. By default grades 0 and 1 differ only
//! in the RGB image (grade 1 carries a dark lesion), while grades 2 to 5 differ
//! only in the peak temperature of a Gaussian hotspot. Those grades also get the
//! same dark lesion, at the hotspot, on a coin flip, so RGB alone cannot tell
//! them apart and cannot tell them from grades 0 and 1 either. Neither modality
//! suffices on its own; together they separate all six grades.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, Grade, SampleRecord, NUM_CLASSES};
use crate::thermal::{
    self, celsius_to_counts, RawThermalFrame, ThermalError, TiffCompression, FRAME_HEIGHT, FRAME_WIDTH,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic dataset spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotspotSpec {
    /// Bounding-box half-width in thermal pixels; the Gaussian sigma is half of it.
    pub radius_px: f64,
    /// Peak temperature per grade, used for thermal-signal grades only.
    pub peak_c: [f64; NUM_CLASSES],
    /// Smallest distance between a hotspot centre and the foot outline, in pixels.
    pub margin_px: f64,
}

impl Default for HotspotSpec {
    fn default() -> Self {
        Self {
            radius_px: 16.0,
            peak_c: [31.0, 31.0, 33.5, 35.5, 37.5, 39.5],
            margin_px: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_per_class: [usize; NUM_CLASSES],
    /// RGB image width and height in pixels.
    pub rgb_size: [usize; 2],
    pub rgb_signal_classes: Vec<u8>,
    pub thermal_signal_classes: Vec<u8>,
    pub hotspot: HotspotSpec,
    pub background_c: f64,
    pub foot_c: f64,
    /// Per-pixel Gaussian noise on the thermal field, in °C.
    pub thermal_noise_c: f64,
    /// Per-pixel Gaussian noise on RGB values in [0, 1].
    pub rgb_noise: f64,
    /// Probability that a thermal-signal sample also shows the RGB lesion.
    pub lesion_p: f64,
    /// Fraction of samples whose thermal frame is marked invalid.
    pub thermal_invalid_p: f64,
    pub compression: SynthCompression,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthCompression {
    #[default]
    None,
    Deflate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_class: [100; NUM_CLASSES],
            rgb_size: [FRAME_WIDTH, FRAME_HEIGHT],
            rgb_signal_classes: vec![0, 1],
            thermal_signal_classes: vec![2, 3, 4, 5],
            hotspot: HotspotSpec::default(),
            background_c: 22.0,
            foot_c: 31.0,
            thermal_noise_c: 0.1,
            rgb_noise: 0.02,
            lesion_p: 0.5,
            thermal_invalid_p: 0.0,
            compression: SynthCompression::None,
        }
    }
}

impl SynthSpec {
    /// Class sizes proportional to the clinical thermal counts, scaled to `total`.
    pub fn with_clinical_ratios(total: usize) -> Self {
        let base = crate::dataset::CLINICAL_THERMAL_COUNTS;
        let sum: usize = base.iter().sum();
        let n_per_class = base.map(|n| ((n * total) as f64 / sum as f64).round().max(1.0) as usize);
        Self {
            n_per_class,
            ..Self::default()
        }
    }

    pub fn total(&self) -> usize {
        self.n_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadSpec(m));
        if let Some(c) = self.n_per_class.iter().position(|&n| n == 0) {
            return bad(format!("grade {c} has no samples"));
        }
        if self.rgb_size.iter().any(|&s| s < 8) {
            return bad("RGB images must be at least 8x8".into());
        }
        let mut covered = [0u8; NUM_CLASSES];
        for &g in self.rgb_signal_classes.iter().chain(&self.thermal_signal_classes) {
            match covered.get_mut(usize::from(g)) {
                Some(slot) => *slot += 1,
                None => return bad(format!("grade {g} outside 0..=5")),
            }
        }
        if covered.iter().any(|&n| n != 1) {
            return bad("RGB and thermal signal grades must partition 0..=5".into());
        }
        if self.rgb_signal_classes.is_empty() || self.thermal_signal_classes.is_empty() {
            return bad("both modalities need at least one signal grade".into());
        }
        let h = &self.hotspot;
        if !(h.radius_px > 0.0) || h.radius_px * 2.0 > FRAME_HEIGHT as f64 {
            return bad(format!("hotspot radius {} px does not fit the frame", h.radius_px));
        }
        let mut peaks: Vec<f64> = self
            .thermal_signal_classes
            .iter()
            .map(|&g| h.peak_c[usize::from(g)])
            .collect();
        if peaks.iter().any(|&p| p <= self.foot_c) {
            return bad("hotspot peaks must exceed the foot temperature".into());
        }
        peaks.sort_by(f64::total_cmp);
        if peaks.windows(2).any(|w| w[0] == w[1]) {
            return bad("thermal-signal grades need distinct hotspot peaks".into());
        }
        for (name, p) in [
            ("lesion_p", self.lesion_p),
            ("thermal_invalid_p", self.thermal_invalid_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.thermal_noise_c < 0.0 || self.rgb_noise < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    fn is_thermal_signal(&self, grade: Grade) -> bool {
        self.thermal_signal_classes.contains(&grade.value())
    }

    /// Rank of an RGB-signal grade among the RGB-signal grades.
    fn rgb_rank(&self, grade: Grade) -> Option<usize> {
        let mut classes = self.rgb_signal_classes.clone();
        classes.sort_unstable();
        classes.iter().position(|&g| g == grade.value())
    }

    pub fn grade_of(&self, index: usize) -> Grade {
        let mut acc = 0;
        for (c, &n) in self.n_per_class.iter().enumerate() {
            acc += n;
            if index < acc {
                return Grade::ALL[c];
            }
        }
        panic!("sample index {index} beyond {acc} samples")
    }
}

/// Known truth for one generated sample. Coordinates are thermal-frame pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub grade: Grade,
    /// `[x0, y0, x1, y1]`, inclusive of x0/y0 and exclusive of x1/y1.
    pub hotspot_bbox: Option<[usize; 4]>,
    pub hotspot_center: Option<[usize; 2]>,
    pub peak_c: Option<f64>,
    pub lesion: bool,
    pub thermal_valid: bool,
}

impl SampleTruth {
    /// Bounding box as fractions of the frame, `[x0, y0, x1, y1]` in [0, 1].
    pub fn bbox_fraction(&self) -> Option<[f64; 4]> {
        self.hotspot_bbox.map(|[x0, y0, x1, y1]| {
            [
                x0 as f64 / FRAME_WIDTH as f64,
                y0 as f64 / FRAME_HEIGHT as f64,
                x1 as f64 / FRAME_WIDTH as f64,
                y1 as f64 / FRAME_HEIGHT as f64,
            ]
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub frame_size: [usize; 2],
    pub samples: Vec<SampleTruth>,
}

impl GroundTruth {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn get(&self, id: &str) -> Option<&SampleTruth> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// One rendered sample before it hits the disk.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub rgb: image::RgbImage,
    pub thermal: RawThermalFrame,
    /// The noiseless-then-noisy temperature field that was encoded.
    pub celsius: Vec<f64>,
    pub truth: SampleTruth,
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Elliptical foot outline in thermal-frame coordinates.
#[derive(Clone, Copy, Debug)]
struct Foot {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Foot {
    /// Values below 1 are inside.
    fn level(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2)
    }
}

const SKIN: [f64; 3] = [0.85, 0.66, 0.55];
const FLOOR: [f64; 3] = [0.30, 0.34, 0.40];
const LESION_PALETTE: [[f64; 3]; 5] = [
    [0.45, 0.08, 0.08],
    [0.10, 0.08, 0.07],
    [0.85, 0.80, 0.25],
    [0.35, 0.45, 0.15],
    [0.55, 0.30, 0.55],
];

/// Renders sample `index` of `spec` from its own random stream.
pub fn render_sample(spec: &SynthSpec, index: usize) -> SynthSample {
    let grade = spec.grade_of(index);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    let (fw, fh) = (FRAME_WIDTH as f64, FRAME_HEIGHT as f64);
    let foot = Foot {
        cx: fw / 2.0 + rng.random_range(-4.0..=4.0),
        cy: fh / 2.0 + rng.random_range(-3.0..=3.0),
        ax: 62.0 + rng.random_range(-1.5..=1.5),
        ay: 50.0 + rng.random_range(-1.5..=1.5),
    };
    let skin_shift: f64 = rng.random_range(-0.06..=0.06);

    // Hotspot or lesion centre: an integer pixel well inside the foot.
    let r = spec.hotspot.radius_px;
    let inner = |x: f64, y: f64| {
        let reach = r.min(12.0) + spec.hotspot.margin_px;
        let shrunk = Foot {
            ax: (foot.ax - reach).max(1.0),
            ay: (foot.ay - reach).max(1.0),
            ..foot
        };
        shrunk.level(x, y) <= 1.0
    };
    let mut center = [foot.cx.round() as usize, foot.cy.round() as usize];
    for _ in 0..1000 {
        let x = rng.random_range(0..FRAME_WIDTH);
        let y = rng.random_range(0..FRAME_HEIGHT);
        if inner(x as f64, y as f64) {
            center = [x, y];
            break;
        }
    }

    let thermal_signal = spec.is_thermal_signal(grade);
    let lesion_coin = rng.random_bool(spec.lesion_p);
    let lesion_style = match spec.rgb_rank(grade) {
        Some(0) | None if !thermal_signal => None,
        Some(rank) if !thermal_signal => Some(LESION_PALETTE[(rank - 1) % LESION_PALETTE.len()]),
        _ => lesion_coin.then_some(LESION_PALETTE[0]),
    };
    let lesion_radius = 10.0 + rng.random_range(-1.5..=1.5);
    let thermal_valid = !rng.random_bool(spec.thermal_invalid_p);

    // Thermal field.
    let peak = thermal_signal.then(|| spec.hotspot.peak_c[grade.index()]);
    let sigma = r / 2.0;
    let noise = Normal::new(0.0, spec.thermal_noise_c.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut celsius = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
    for y in 0..FRAME_HEIGHT {
        for x in 0..FRAME_WIDTH {
            let (px, py) = (x as f64, y as f64);
            // Soft edge over about two pixels.
            let edge = ((1.0 - foot.level(px, py)) * foot.ax.min(foot.ay) / 2.0).clamp(0.0, 1.0);
            let mut t = spec.background_c + (spec.foot_c - spec.background_c) * edge;
            if let Some(peak) = peak {
                let d2 = (px - center[0] as f64).powi(2) + (py - center[1] as f64).powi(2);
                t += (peak - t) * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            if spec.thermal_noise_c > 0.0 {
                t += noise.sample(&mut rng);
            }
            celsius.push(t);
        }
    }
    let counts: Vec<u16> = celsius.iter().map(|&t| celsius_to_counts(t)).collect();
    let thermal = RawThermalFrame::new(FRAME_WIDTH, FRAME_HEIGHT, counts).expect("frame shape");

    // RGB image on the same field of view.
    let [w, h] = spec.rgb_size;
    let (sx, sy) = (fw / w as f64, fh / h as f64);
    let rgb_noise = Normal::new(0.0, spec.rgb_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in rgb.enumerate_pixels_mut() {
        let (px, py) = ((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
        let edge = ((1.0 - foot.level(px, py)) * foot.ax.min(foot.ay) / 2.0).clamp(0.0, 1.0);
        let mut color: [f64; 3] = std::array::from_fn(|c| FLOOR[c] + (SKIN[c] + skin_shift - FLOOR[c]) * edge);
        if let Some(style) = lesion_style {
            let d = ((px - center[0] as f64).powi(2) + (py - center[1] as f64).powi(2)).sqrt();
            let a = (lesion_radius - d + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                color[c] += (style[c] - color[c]) * a;
            }
        }
        for (c, out) in p.0.iter_mut().enumerate() {
            let v = color[c]
                + if spec.rgb_noise > 0.0 {
                    rgb_noise.sample(&mut rng)
                } else {
                    0.0
                };
            *out = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }

    let bbox = peak.map(|_| {
        let ri = r.ceil() as usize;
        [
            center[0].saturating_sub(ri),
            center[1].saturating_sub(ri),
            (center[0] + ri + 1).min(FRAME_WIDTH),
            (center[1] + ri + 1).min(FRAME_HEIGHT),
        ]
    });
    SynthSample {
        rgb,
        thermal,
        celsius,
        truth: SampleTruth {
            id: sample_id(index),
            grade,
            hotspot_bbox: bbox,
            hotspot_center: peak.map(|_| center),
            peak_c: peak,
            lesion: lesion_style.is_some(),
            thermal_valid,
        },
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub ground_truth: GroundTruth,
}

/// Writes `rgb/*.png`, `thermal/*.tiff`, `manifest.csv` and `ground_truth.json`
/// under `out_dir`. Output bytes depend only on the spec.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("rgb"))?;
    std::fs::create_dir_all(out_dir.join("thermal"))?;
    let compression = match spec.compression {
        SynthCompression::None => TiffCompression::None,
        SynthCompression::Deflate => TiffCompression::Deflate,
    };

    let results: Vec<Result<(SampleRecord, SampleTruth), SynthError>> = (0..spec.total())
        .into_par_iter()
        .map(|i| {
            let s = render_sample(spec, i);
            let id = &s.truth.id;
            let rgb_path = out_dir.join("rgb").join(format!("{id}.png"));
            let thermal_path = out_dir.join("thermal").join(format!("{id}.tiff"));
            s.rgb.save(&rgb_path)?;
            thermal::write_raw(&s.thermal, &thermal_path, compression)?;
            Ok((
                SampleRecord {
                    id: id.clone(),
                    rgb_path,
                    thermal_raw_path: Some(thermal_path),
                    grade: s.truth.grade,
                    thermal_valid: s.truth.thermal_valid,
                },
                s.truth,
            ))
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut truths = Vec::with_capacity(results.len());
    for r in results {
        let (rec, truth) = r?;
        records.push(rec);
        truths.push(truth);
    }

    let manifest = DatasetManifest::from_records(records)?;
    let manifest_path = out_dir.join("manifest.csv");
    manifest.write_csv(&manifest_path, Some(out_dir))?;
    let ground_truth = GroundTruth {
        seed: spec.seed,
        frame_size: [FRAME_WIDTH, FRAME_HEIGHT],
        samples: truths,
    };
    std::fs::write(
        out_dir.join("ground_truth.json"),
        serde_json::to_string_pretty(&ground_truth)? + "\n",
    )?;
    Ok(SynthOutput {
        manifest,
        manifest_path,
        ground_truth,
    })
}
