//! Gradient-weighted class activation maps.

use std::path::Path;

use candle_core::{DType, IndexOp, Var};
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::FusedSample;
use thermofuse_core::raster::resize_plane;
use thermofuse_core::Grade;

use crate::error::{ModelError, Result};
use crate::layers::Ctx;
use crate::model::Model;

/// Heat at full strength is blended with this weight; zero heat leaves the image untouched.
pub const OVERLAY_ALPHA: f32 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamMap {
    pub layer_id: String,
    pub target_class: Grade,
    pub height: usize,
    pub width: usize,
    /// Row-major map at the layer's resolution, in [0, 1].
    pub heat: Vec<f32>,
    /// Side of the square input the map was upsampled to.
    pub size: usize,
    pub upsampled: Vec<f32>,
}

impl CamMap {
    pub fn is_zero(&self) -> bool {
        self.heat.iter().all(|&v| v == 0.0)
    }

    pub fn heat_min(&self) -> f32 {
        self.heat.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn heat_max(&self) -> f32 {
        self.heat.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Pixel `(x, y)` of the upsampled maximum; the first one in row-major order on ties.
    pub fn argmax_xy(&self) -> (usize, usize) {
        let mut at = 0;
        for (i, &v) in self.upsampled.iter().enumerate() {
            if v > self.upsampled[at] {
                at = i;
            }
        }
        (at % self.size, at / self.size)
    }
}

/// Grad-CAM of `target` at stage `layer_id`, computed in inference mode.
pub fn grad_cam(model: &Model, sample: &FusedSample, target: Grade, layer_id: &str) -> Result<CamMap> {
    let idx = model
        .stage_index(layer_id)
        .ok_or_else(|| ModelError::UnknownLayer(layer_id.to_string()))?;
    let x = model.to_input(&[sample])?;
    let mut ctx = Ctx::eval();
    let features = model.forward_stages(&x, 0..idx + 1, &mut ctx)?;
    if features.rank() != 4 {
        return Err(ModelError::NonSpatialLayer(layer_id.to_string()));
    }
    let (_, channels, h, w) = features.dims4()?;
    let leaf = Var::from_tensor(&features.detach())?;
    let logits = model.forward_stages(leaf.as_tensor(), idx + 1..model.num_stages(), &mut ctx)?;
    let score = logits.i((0, target.index()))?;
    let grads = score.backward()?;

    let acts = features.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let plane = h * w;
    let mut cam = vec![0.0f64; plane];
    if let Some(g) = grads.get(leaf.as_tensor()) {
        let g = g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        for k in 0..channels {
            let gk = &g[k * plane..(k + 1) * plane];
            let alpha = gk.iter().sum::<f64>() / plane as f64;
            if alpha == 0.0 {
                continue;
            }
            for (c, a) in cam.iter_mut().zip(&acts[k * plane..(k + 1) * plane]) {
                *c += alpha * a;
            }
        }
    }
    let max = cam.iter().fold(0.0f64, |m, &v| m.max(v));
    let heat: Vec<f32> = cam
        .iter()
        .map(|&v| if max > 0.0 { (v.max(0.0) / max) as f32 } else { 0.0 })
        .collect();
    let size = model.input_size();
    let upsampled = resize_plane(&heat, h, w, size, size)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(CamMap {
        layer_id: layer_id.to_string(),
        target_class: target,
        height: h,
        width: w,
        heat,
        size,
        upsampled,
    })
}

/// Blue to cyan to yellow to red.
pub fn colormap(v: f32) -> [f32; 3] {
    const STOPS: [[f32; 3]; 4] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let t = v.clamp(0.0, 1.0) * 3.0;
    let i = (t.floor() as usize).min(2);
    let f = t - i as f32;
    std::array::from_fn(|c| STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f)
}

/// Blends the first three sample channels with the colour-mapped heat.
pub fn overlay(cam: &CamMap, sample: &FusedSample) -> Result<image::RgbImage> {
    let (c, h, w) = sample.tensor.shape();
    if (h, w) != (cam.size, cam.size) || c < 3 {
        return Err(ModelError::ShapeMismatch {
            expected: (3, cam.size, cam.size),
            found: (c, h, w),
        });
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let heat = cam.upsampled[i];
        let a = OVERLAY_ALPHA * heat;
        let tint = colormap(heat);
        for ch in 0..3 {
            let base = sample.tensor.channel(ch)[i];
            let v = if a == 0.0 {
                base
            } else {
                base * (1.0 - a) + tint[ch] * a
            };
            px.0[ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(img)
}

/// Writes [`overlay`] as a PNG.
pub fn render_overlay(cam: &CamMap, sample: &FusedSample, out_path: impl AsRef<Path>) -> Result<()> {
    overlay(cam, sample)?.save_with_format(out_path, image::ImageFormat::Png)?;
    Ok(())
}
