//! Planar float images and resampling.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("buffer of {len} values does not match shape {channels}x{height}x{width}")]
pub struct ShapeError {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub len: usize,
}

/// Channel-major (CHW) float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if data.len() != channels * height * width {
            return Err(ShapeError {
                channels,
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Stacks single-channel planes of identical size.
    pub fn from_planes(height: usize, width: usize, planes: &[&[f32]]) -> Result<Self, ShapeError> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for plane in planes {
            if plane.len() != height * width {
                return Err(ShapeError {
                    channels: planes.len(),
                    height,
                    width,
                    len: plane.len(),
                });
            }
            data.extend_from_slice(plane);
        }
        Ok(Self {
            channels: planes.len(),
            height,
            width,
            data,
        })
    }

    /// RGB8 pixels scaled into [0, 1].
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * w * h];
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = f32::from(p.0[c]) / 255.0;
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    /// First three channels as an RGB8 image (values clamped to [0, 1]).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let plane = self.height * self.width;
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, p) in img.pixels_mut().enumerate() {
            for c in 0..3 {
                let v = self.data[c.min(self.channels - 1) * plane + i];
                p.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            data.extend(resize_plane(self.channel(c), self.height, self.width, height, width));
        }
        Self {
            channels: self.channels,
            height,
            width,
            data,
        }
    }
}

/// Separable triangle-filter resampling with pixel-center alignment.
///
/// Upsampling is plain bilinear interpolation with edge clamping; downsampling
/// widens the filter support by the scale factor so that every source pixel
/// contributes (area-aware, no aliasing of small structures).
pub fn resize_plane(src: &[f32], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), height * width, "plane size mismatch");
    let wx = filter_weights(width, out_w);
    let wy = filter_weights(height, out_h);

    let mut tmp = vec![0.0f32; height * out_w];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (ox, (start, weights)) in wx.iter().enumerate() {
            let mut acc = 0.0f32;
            for (k, w) in weights.iter().enumerate() {
                acc += row[start + k] * w;
            }
            tmp[y * out_w + ox] = acc;
        }
    }
    let mut out = vec![0.0f32; out_h * out_w];
    for (oy, (start, weights)) in wy.iter().enumerate() {
        for ox in 0..out_w {
            let mut acc = 0.0f32;
            for (k, w) in weights.iter().enumerate() {
                acc += tmp[(start + k) * out_w + ox] * w;
            }
            out[oy * out_w + ox] = acc;
        }
    }
    out
}

fn filter_weights(in_len: usize, out_len: usize) -> Vec<(usize, Vec<f32>)> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|i| {
                    let d = ((i as f64 + 0.5 - center) / support).abs();
                    (1.0 - d).max(0.0)
                })
                .collect();
            let mut sum: f64 = weights.iter().sum();
            if sum <= 0.0 {
                // Degenerate tiny inputs: nearest neighbour.
                weights.iter_mut().for_each(|w| *w = 0.0);
                let nearest = (center.floor() as usize).clamp(lo, hi - 1);
                weights[nearest - lo] = 1.0;
                sum = 1.0;
            }
            let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            let trimmed = weights[first..=last].iter().map(|w| (w / sum) as f32).collect();
            (lo + first, trimmed)
        })
        .collect()
}
