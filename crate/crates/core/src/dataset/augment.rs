//! Training-time augmentation.
//!
//! Geometric transforms (crop-resize, horizontal flip, rotation, affine) are
//! sampled once per sample, composed into a single inverse affine map and
//! resampled bilinearly with zero fill, so every channel moves together.
//! Colour jitter touches only the RGB channels of the modality.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::FusedSample;
use crate::raster::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    pub enabled: bool,
    /// Smallest kept fraction of the image area.
    pub min_scale: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_scale: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineConfig {
    pub enabled: bool,
    /// Maximum shift as a fraction of width and height.
    pub translate: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            translate: 0.05,
            scale_min: 0.95,
            scale_max: 1.05,
        }
    }
}

/// Jitter strengths with the usual meaning: factors drawn from
/// `[1 - s, 1 + s]`, hue shift from `[-hue, hue]` turns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

impl ColorJitter {
    pub const NONE: ColorJitter = ColorJitter {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub hflip_p: f64,
    pub rotation_deg: f64,
    pub affine: AffineConfig,
    pub crop: CropConfig,
    pub jitter: ColorJitter,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.3,
            rotation_deg: 10.0,
            affine: AffineConfig::default(),
            crop: CropConfig::default(),
            jitter: ColorJitter::default(),
        }
    }
}

impl AugmentationConfig {
    /// Leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            hflip_p: 0.0,
            rotation_deg: 0.0,
            affine: AffineConfig {
                enabled: false,
                ..AffineConfig::default()
            },
            crop: CropConfig {
                enabled: false,
                ..CropConfig::default()
            },
            jitter: ColorJitter::NONE,
        }
    }
}

/// 2x3 affine map from output pixel coordinates to source coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine([f64; 6]);

impl Affine {
    const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    /// `self` after `inner`: x -> self(inner(x)).
    fn compose(&self, inner: &Affine) -> Affine {
        let a = &self.0;
        let b = &inner.0;
        Affine([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    fn is_identity(&self) -> bool {
        self.0
            .iter()
            .zip(Affine::IDENTITY.0)
            .all(|(a, b)| (a - b).abs() < 1e-12)
    }

    /// Rotation by `theta` and isotropic zoom `1/scale`, about `(cx, cy)`, then a shift.
    fn about_center(theta: f64, scale: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Affine {
        // Inverse of: p' = R(theta) * scale * (p - c) + c + t.
        let (s, c) = theta.sin_cos();
        let k = 1.0 / scale;
        let (a, b, d, e) = (c * k, s * k, -s * k, c * k);
        let (px, py) = (-cx - tx, -cy - ty);
        Affine([a, b, a * px + b * py + cx, d, e, d * px + e * py + cy])
    }
}

fn sample_geometry<R: Rng + ?Sized>(config: &AugmentationConfig, width: usize, height: usize, rng: &mut R) -> Affine {
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);

    let crop = if config.crop.enabled && config.crop.min_scale < 1.0 {
        let area = rng.random_range(config.crop.min_scale.max(0.0)..=1.0);
        let side = area.sqrt();
        let ox = rng.random_range(0.0..=(1.0 - side)) * w;
        let oy = rng.random_range(0.0..=(1.0 - side)) * h;
        Affine([side, 0.0, ox, 0.0, side, oy])
    } else {
        Affine::IDENTITY
    };

    let flip = if config.hflip_p > 0.0 && rng.random_bool(config.hflip_p.min(1.0)) {
        Affine([-1.0, 0.0, w, 0.0, 1.0, 0.0])
    } else {
        Affine::IDENTITY
    };

    let rotation = if config.rotation_deg > 0.0 {
        let deg = rng.random_range(-config.rotation_deg..=config.rotation_deg);
        Affine::about_center(deg.to_radians(), 1.0, cx, cy, 0.0, 0.0)
    } else {
        Affine::IDENTITY
    };

    let affine = if config.affine.enabled {
        let t = config.affine.translate.max(0.0);
        let tx = if t > 0.0 { rng.random_range(-t..=t) * w } else { 0.0 };
        let ty = if t > 0.0 { rng.random_range(-t..=t) * h } else { 0.0 };
        let scale = if config.affine.scale_max > config.affine.scale_min {
            rng.random_range(config.affine.scale_min..=config.affine.scale_max)
        } else {
            config.affine.scale_min
        };
        Affine::about_center(0.0, scale, cx, cy, tx, ty)
    } else {
        Affine::IDENTITY
    };

    // Forward order is crop, flip, rotate, affine; the inverse map unwinds it.
    crop.compose(&flip).compose(&rotation).compose(&affine)
}

fn warp(image: &ImageTensor, map: &Affine) -> ImageTensor {
    let (channels, h, w) = image.shape();
    let mut out = ImageTensor::zeros(channels, h, w);
    let plane = h * w;
    let src = image.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.apply(x as f64 + 0.5, y as f64 + 0.5);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = ((fx - x0) as f32, (fy - y0) as f32);
            let taps = [
                (x0, y0, (1.0 - ax) * (1.0 - ay)),
                (x0 + 1.0, y0, ax * (1.0 - ay)),
                (x0, y0 + 1.0, (1.0 - ax) * ay),
                (x0 + 1.0, y0 + 1.0, ax * ay),
            ];
            for (tx, ty, wt) in taps {
                if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                    continue;
                }
                let idx = ty as usize * w + tx as usize;
                for c in 0..channels {
                    dst[c * plane + y * w + x] += wt * src[c * plane + idx];
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Photometric {
    Brightness(f32),
    Contrast(f32),
    Saturation(f32),
    Hue(f32),
}

fn sample_jitter<R: Rng + ?Sized>(jitter: &ColorJitter, rng: &mut R) -> Vec<Photometric> {
    let factor = |s: f64, rng: &mut R| -> Option<f32> {
        (s > 0.0).then(|| rng.random_range((1.0 - s).max(0.0)..=1.0 + s) as f32)
    };
    let mut ops = Vec::with_capacity(4);
    if let Some(f) = factor(jitter.brightness, rng) {
        ops.push(Photometric::Brightness(f));
    }
    if let Some(f) = factor(jitter.contrast, rng) {
        ops.push(Photometric::Contrast(f));
    }
    if let Some(f) = factor(jitter.saturation, rng) {
        ops.push(Photometric::Saturation(f));
    }
    if jitter.hue > 0.0 {
        let h = jitter.hue.min(0.5);
        ops.push(Photometric::Hue(rng.random_range(-h..=h) as f32));
    }
    ops.shuffle(rng);
    ops
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn apply_photometric(image: &mut ImageTensor, ops: &[Photometric]) {
    let plane = image.height() * image.width();
    let data = image.data_mut();
    let (r, rest) = data.split_at_mut(plane);
    let (g, rest) = rest.split_at_mut(plane);
    let b = &mut rest[..plane];
    for op in ops {
        match *op {
            Photometric::Brightness(f) => {
                for v in r.iter_mut().chain(g.iter_mut()).chain(b.iter_mut()) {
                    *v = (*v * f).clamp(0.0, 1.0);
                }
            }
            Photometric::Contrast(f) => {
                let mean = (0..plane).map(|i| gray(r[i], g[i], b[i]) as f64).sum::<f64>() / plane as f64;
                let mean = mean as f32;
                for v in r.iter_mut().chain(g.iter_mut()).chain(b.iter_mut()) {
                    *v = (mean + f * (*v - mean)).clamp(0.0, 1.0);
                }
            }
            Photometric::Saturation(f) => {
                for i in 0..plane {
                    let l = gray(r[i], g[i], b[i]);
                    r[i] = (l + f * (r[i] - l)).clamp(0.0, 1.0);
                    g[i] = (l + f * (g[i] - l)).clamp(0.0, 1.0);
                    b[i] = (l + f * (b[i] - l)).clamp(0.0, 1.0);
                }
            }
            Photometric::Hue(shift) => {
                for i in 0..plane {
                    let (h, s, v) = rgb_to_hsv(r[i], g[i], b[i]);
                    let (nr, ng, nb) = hsv_to_rgb(h + shift, s, v);
                    r[i] = nr;
                    g[i] = ng;
                    b[i] = nb;
                }
            }
        }
    }
}

/// Returns an augmented copy; the label and shape never change.
pub fn augment<R: Rng + ?Sized>(sample: &FusedSample, config: &AugmentationConfig, rng: &mut R) -> FusedSample {
    let (_, h, w) = sample.tensor.shape();
    let map = sample_geometry(config, w, h, rng);
    let mut tensor = if map.is_identity() {
        sample.tensor.clone()
    } else {
        warp(&sample.tensor, &map)
    };

    let ops = sample_jitter(&config.jitter, rng);
    if !ops.is_empty() && sample.modality.rgb_channels().len() == 3 {
        apply_photometric(&mut tensor, &ops);
    }

    FusedSample {
        tensor,
        label: sample.label,
        modality: sample.modality,
    }
}
