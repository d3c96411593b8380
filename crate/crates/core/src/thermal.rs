//! Radiometric thermal frames.
//!
//! A raw frame is a 160x120 matrix of 16-bit counts, each count an absolute
//! temperature in centi-Kelvin. Processing is a chain of pure functions:
//!
//! ```text
//! decode_raw -> to_celsius -> adaptive_window -> normalize
//! ```
//!
//! The window starts at [30, 45] °C. When the frame mean falls below 30 °C the
//! window slides down in fixed steps (never below a floor, 0 °C by default) until
//! it contains the mean. Frames hotter than 45 °C slide the window up the same way;
//! that direction is an extension for hot ambient scenes. The window width never
//! changes.
//!
//! Pixels below the window normalize to 0 and pixels above it to 1; they are
//! clamped, not zeroed, so the hottest tissue keeps its signal.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_WIDTH: usize = 160;
pub const FRAME_HEIGHT: usize = 120;
pub const FRAME_PIXELS: usize = FRAME_WIDTH * FRAME_HEIGHT;

/// Counts per Kelvin (the sensor resolution is 0.01 K).
pub const COUNTS_PER_KELVIN: f64 = 100.0;
/// 0 °C expressed in counts.
pub const ZERO_CELSIUS_COUNTS: i64 = 27_315;

pub const DEFAULT_WINDOW_LO: f64 = 30.0;
pub const DEFAULT_WINDOW_HI: f64 = 45.0;
pub const WINDOW_WIDTH: f64 = DEFAULT_WINDOW_HI - DEFAULT_WINDOW_LO;

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("malformed TIFF: {0}")]
    MalformedTiff(String),
    #[error("expected a {FRAME_WIDTH}x{FRAME_HEIGHT} frame, got {width}x{height}")]
    WrongShape { width: usize, height: usize },
    #[error("expected 16 bits per sample, got {0}")]
    WrongDepth(String),
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("invalid temperature map: {0}")]
    InvalidMap(String),
    #[error("invalid window parameters: {0}")]
    InvalidParams(String),
    #[error("failed to encode output image: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One 160x120 frame of centi-Kelvin counts, row-major with a top-left origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawThermalFrame {
    pixels: Vec<u16>,
}

impl RawThermalFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self, ThermalError> {
        if width != FRAME_WIDTH || height != FRAME_HEIGHT {
            return Err(ThermalError::WrongShape { width, height });
        }
        if pixels.len() != FRAME_PIXELS {
            return Err(ThermalError::PixelCount {
                expected: FRAME_PIXELS,
                actual: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    pub fn filled(count: u16) -> Self {
        Self {
            pixels: vec![count; FRAME_PIXELS],
        }
    }

    pub fn width(&self) -> usize {
        FRAME_WIDTH
    }

    pub fn height(&self) -> usize {
        FRAME_HEIGHT
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * FRAME_WIDTH + x]
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }
}

/// Converts one count to degrees Celsius.
///
/// The offset is removed in integer arithmetic first, so the single division is
/// the only rounding step and the result is the correctly rounded value of
/// `count / 100 - 273.15`.
#[inline]
pub fn counts_to_celsius(count: u16) -> f64 {
    (i64::from(count) - ZERO_CELSIUS_COUNTS) as f64 / COUNTS_PER_KELVIN
}

/// Inverse of [`counts_to_celsius`], rounded to the nearest count and saturated
/// to the 16-bit range.
pub fn celsius_to_counts(celsius: f64) -> u16 {
    let counts = (celsius * COUNTS_PER_KELVIN + ZERO_CELSIUS_COUNTS as f64).round();
    counts.clamp(0.0, f64::from(u16::MAX)) as u16
}

/// Decodes a single-image, single-channel, 16-bit TIFF (uncompressed or deflate).
pub fn decode_raw(tiff_bytes: &[u8]) -> Result<RawThermalFrame, ThermalError> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::ColorType;

    let malformed = |e: tiff::TiffError| ThermalError::MalformedTiff(e.to_string());
    let mut decoder = Decoder::new(Cursor::new(tiff_bytes)).map_err(malformed)?;
    let (width, height) = decoder.dimensions().map_err(malformed)?;
    let (width, height) = (width as usize, height as usize);
    if width != FRAME_WIDTH || height != FRAME_HEIGHT {
        return Err(ThermalError::WrongShape { width, height });
    }
    match decoder.colortype().map_err(malformed)? {
        ColorType::Gray(16) => {}
        ColorType::Gray(bits) => return Err(ThermalError::WrongDepth(format!("{bits} bits"))),
        other => {
            return Err(ThermalError::MalformedTiff(format!(
                "expected a single-channel image, got {other:?}"
            )))
        }
    }
    if decoder.more_images() {
        return Err(ThermalError::MalformedTiff(
            "expected a single image, found several".into(),
        ));
    }
    match decoder.read_image().map_err(malformed)? {
        DecodingResult::U16(pixels) => RawThermalFrame::new(width, height, pixels),
        _ => Err(ThermalError::WrongDepth(
            "16-bit samples that are not unsigned integers".into(),
        )),
    }
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawThermalFrame, ThermalError> {
    decode_raw(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TiffCompression {
    #[default]
    None,
    Deflate,
}

pub fn encode_raw(frame: &RawThermalFrame, compression: TiffCompression) -> Result<Vec<u8>, ThermalError> {
    use tiff::encoder::{colortype, compression::DeflateLevel, Compression, TiffEncoder};

    let mut out = Cursor::new(Vec::new());
    let compression = match compression {
        TiffCompression::None => Compression::Uncompressed,
        TiffCompression::Deflate => Compression::Deflate(DeflateLevel::Balanced),
    };
    let mut encoder = TiffEncoder::new(&mut out)
        .map_err(|e| ThermalError::Encode(e.to_string()))?
        .with_compression(compression);
    encoder
        .write_image::<colortype::Gray16>(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, &frame.pixels)
        .map_err(|e| ThermalError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_raw(
    frame: &RawThermalFrame,
    path: impl AsRef<Path>,
    compression: TiffCompression,
) -> Result<(), ThermalError> {
    std::fs::write(path, encode_raw(frame, compression)?)?;
    Ok(())
}

/// Per-pixel temperatures in °C together with their arithmetic mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureMap {
    width: usize,
    height: usize,
    celsius: Vec<f64>,
    mean_c: f64,
}

impl TemperatureMap {
    /// Builds a map from arbitrary finite temperatures.
    pub fn from_celsius(width: usize, height: usize, celsius: Vec<f64>) -> Result<Self, ThermalError> {
        if width == 0 || height == 0 || celsius.len() != width * height {
            return Err(ThermalError::InvalidMap(format!(
                "{} values for a {width}x{height} map",
                celsius.len()
            )));
        }
        if celsius.iter().any(|t| !t.is_finite()) {
            return Err(ThermalError::InvalidMap("non-finite temperature".into()));
        }
        let mean_c = celsius.iter().sum::<f64>() / celsius.len() as f64;
        Ok(Self {
            width,
            height,
            celsius,
            mean_c,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn celsius(&self) -> &[f64] {
        &self.celsius
    }

    pub fn mean_c(&self) -> f64 {
        self.mean_c
    }
}

/// Applies the count-to-Celsius conversion to every pixel.
///
/// The mean comes from the exact integer sum of counts, so it carries a single
/// rounding error regardless of the pixel values.
pub fn to_celsius(frame: &RawThermalFrame) -> TemperatureMap {
    let celsius = frame.pixels.iter().map(|&c| counts_to_celsius(c)).collect();
    let total: i64 = frame.pixels.iter().map(|&c| i64::from(c)).sum();
    let n = FRAME_PIXELS as i64;
    let mean_c = (total - ZERO_CELSIUS_COUNTS * n) as f64 / (COUNTS_PER_KELVIN * n as f64);
    TemperatureMap {
        width: FRAME_WIDTH,
        height: FRAME_HEIGHT,
        celsius,
        mean_c,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ThermalWindow {
    pub const DEFAULT: ThermalWindow = ThermalWindow {
        lo: DEFAULT_WINDOW_LO,
        hi: DEFAULT_WINDOW_HI,
    };

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, celsius: f64) -> bool {
        self.lo <= celsius && celsius <= self.hi
    }
}

/// Step size and floor of the window search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowParams {
    pub step: f64,
    pub floor: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { step: 1.0, floor: 0.0 }
    }
}

impl WindowParams {
    pub fn new(step: f64, floor: f64) -> Result<Self, ThermalError> {
        let params = Self { step, floor };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(ThermalError::InvalidParams(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !self.floor.is_finite() || self.floor > DEFAULT_WINDOW_LO {
            return Err(ThermalError::InvalidParams(format!(
                "floor must be finite and at most {DEFAULT_WINDOW_LO}, got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Result of the window search for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowDecision {
    pub window: ThermalWindow,
    pub mean_c: f64,
    /// Signed number of steps taken from the default window (negative = down).
    pub steps: i64,
    /// The window hit the floor without reaching the mean.
    pub floor_saturated: bool,
}

/// JSON sidecar written next to every converted frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSidecar {
    pub lo: f64,
    pub hi: f64,
    pub mean_c: f64,
    pub floor_saturated: bool,
}

impl From<&WindowDecision> for WindowSidecar {
    fn from(d: &WindowDecision) -> Self {
        Self {
            lo: d.window.lo,
            hi: d.window.hi,
            mean_c: d.mean_c,
            floor_saturated: d.floor_saturated,
        }
    }
}

pub fn adaptive_window(map: &TemperatureMap, params: &WindowParams) -> WindowDecision {
    window_for_mean(map.mean_c(), params)
}

/// Rounds a bound to a multiple of 2^-32 so that `lo + 15 - lo == 15` holds exactly.
fn snap(x: f64) -> f64 {
    const SCALE: f64 = (1u64 << 32) as f64;
    (x * SCALE).round() / SCALE
}

/// The window search only depends on the frame mean.
pub fn window_for_mean(mean_c: f64, params: &WindowParams) -> WindowDecision {
    let step = params.step;
    if ThermalWindow::DEFAULT.contains(mean_c) {
        return WindowDecision {
            window: ThermalWindow::DEFAULT,
            mean_c,
            steps: 0,
            floor_saturated: false,
        };
    }
    if mean_c < DEFAULT_WINDOW_LO {
        // Smallest k >= 1 with 30 - k * step <= mean.
        let lo_at = |k: i64| snap(DEFAULT_WINDOW_LO - k as f64 * step);
        let floor_k = ((DEFAULT_WINDOW_LO - params.floor) / step).ceil().max(1.0) as i64;
        let mut k = ((DEFAULT_WINDOW_LO - mean_c) / step).ceil().max(1.0) as i64;
        k = k.min(floor_k);
        while k > 1 && lo_at(k - 1) <= mean_c {
            k -= 1;
        }
        while lo_at(k) > mean_c && lo_at(k) > params.floor {
            k += 1;
        }
        let mut lo = lo_at(k);
        if lo <= params.floor {
            lo = params.floor;
        }
        WindowDecision {
            window: ThermalWindow {
                lo,
                hi: lo + WINDOW_WIDTH,
            },
            mean_c,
            steps: -k,
            floor_saturated: mean_c < lo,
        }
    } else {
        // Smallest k >= 1 with 45 + k * step >= mean.
        let hi_at = |k: i64| snap(DEFAULT_WINDOW_LO + k as f64 * step) + WINDOW_WIDTH;
        let mut k = ((mean_c - DEFAULT_WINDOW_HI) / step).ceil().max(1.0) as i64;
        while k > 1 && hi_at(k - 1) >= mean_c {
            k -= 1;
        }
        while hi_at(k) < mean_c {
            k += 1;
        }
        let lo = snap(DEFAULT_WINDOW_LO + k as f64 * step);
        WindowDecision {
            window: ThermalWindow {
                lo,
                hi: lo + WINDOW_WIDTH,
            },
            mean_c,
            steps: k,
            floor_saturated: false,
        }
    }
}

/// Thermal channel scaled into [0, 1] by a window, plus the in-window mask.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedThermal {
    width: usize,
    height: usize,
    values: Vec<f32>,
    mask: Vec<bool>,
    window: ThermalWindow,
}

impl NormalizedThermal {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn window(&self) -> ThermalWindow {
        self.window
    }
}

#[inline]
pub fn normalize_value(celsius: f64, window: &ThermalWindow) -> f64 {
    ((celsius - window.lo) / window.width()).clamp(0.0, 1.0)
}

pub fn normalize(map: &TemperatureMap, window: &ThermalWindow) -> NormalizedThermal {
    let values = map.celsius.iter().map(|&t| normalize_value(t, window) as f32).collect();
    let mask = map.celsius.iter().map(|&t| window.contains(t)).collect();
    NormalizedThermal {
        width: map.width,
        height: map.height,
        values,
        mask,
        window: *window,
    }
}

/// Runs the whole chain on one frame.
pub fn process_frame(
    frame: &RawThermalFrame,
    params: &WindowParams,
) -> (TemperatureMap, WindowDecision, NormalizedThermal) {
    let map = to_celsius(frame);
    let decision = adaptive_window(&map, params);
    let normalized = normalize(&map, &decision.window);
    (map, decision, normalized)
}

/// Writes the normalized channel as a 32-bit float single-channel TIFF.
pub fn write_normalized_tiff(thermal: &NormalizedThermal, path: impl AsRef<Path>) -> Result<(), ThermalError> {
    use tiff::encoder::{colortype, TiffEncoder};

    let mut out = Cursor::new(Vec::new());
    let mut encoder = TiffEncoder::new(&mut out).map_err(|e| ThermalError::Encode(e.to_string()))?;
    encoder
        .write_image::<colortype::Gray32Float>(thermal.width as u32, thermal.height as u32, &thermal.values)
        .map_err(|e| ThermalError::Encode(e.to_string()))?;
    std::fs::write(path, out.into_inner())?;
    Ok(())
}

/// Reads back a float TIFF written by [`write_normalized_tiff`].
pub fn read_normalized_tiff(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>), ThermalError> {
    use tiff::decoder::{Decoder, DecodingResult};

    let bytes = std::fs::read(path)?;
    let malformed = |e: tiff::TiffError| ThermalError::MalformedTiff(e.to_string());
    let mut decoder = Decoder::new(Cursor::new(bytes)).map_err(malformed)?;
    let (w, h) = decoder.dimensions().map_err(malformed)?;
    match decoder.read_image().map_err(malformed)? {
        DecodingResult::F32(values) => Ok((w as usize, h as usize, values)),
        _ => Err(ThermalError::MalformedTiff("expected 32-bit float samples".into())),
    }
}

/// Writes the normalized channel as a 16-bit grayscale PNG storing
/// `round(value * 65535)`.
pub fn write_normalized_png16(thermal: &NormalizedThermal, path: impl AsRef<Path>) -> Result<(), ThermalError> {
    let data: Vec<u16> = thermal
        .values
        .iter()
        .map(|&v| (f64::from(v) * 65535.0).round() as u16)
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(thermal.width as u32, thermal.height as u32, data)
        .ok_or_else(|| ThermalError::Encode("buffer size mismatch".into()))?;
    img.save(path).map_err(|e| ThermalError::Encode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_conversions() {
        assert_eq!(counts_to_celsius(27315), 0.0);
        assert_eq!(counts_to_celsius(31015), 37.0);
        assert_eq!(counts_to_celsius(0), -273.15);
        assert_eq!(celsius_to_counts(37.0), 31015);
        assert_eq!(celsius_to_counts(-300.0), 0);
    }

    #[test]
    fn constant_frame_round_trips() {
        let frame = RawThermalFrame::filled(31015);
        for compression in [TiffCompression::None, TiffCompression::Deflate] {
            let bytes = encode_raw(&frame, compression).unwrap();
            let back = decode_raw(&bytes).unwrap();
            assert!(back.pixels().iter().all(|&c| c == 31015));
        }
    }

    #[test]
    fn transposed_tiff_is_rejected() {
        use tiff::encoder::{colortype, TiffEncoder};
        let mut out = Cursor::new(Vec::new());
        let data = vec![30000u16; FRAME_PIXELS];
        TiffEncoder::new(&mut out)
            .unwrap()
            .write_image::<colortype::Gray16>(120, 160, &data)
            .unwrap();
        let err = decode_raw(&out.into_inner()).unwrap_err();
        assert!(matches!(
            err,
            ThermalError::WrongShape {
                width: 120,
                height: 160
            }
        ));
    }

    #[test]
    fn eight_bit_tiff_is_wrong_depth() {
        use tiff::encoder::{colortype, TiffEncoder};
        let mut out = Cursor::new(Vec::new());
        let data = vec![7u8; FRAME_PIXELS];
        TiffEncoder::new(&mut out)
            .unwrap()
            .write_image::<colortype::Gray8>(160, 120, &data)
            .unwrap();
        assert!(matches!(
            decode_raw(&out.into_inner()),
            Err(ThermalError::WrongDepth(_))
        ));
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(
            decode_raw(b"definitely not a tiff"),
            Err(ThermalError::MalformedTiff(_))
        ));
    }

    #[test]
    fn frame_rejects_bad_dimensions() {
        assert!(RawThermalFrame::new(120, 160, vec![0; FRAME_PIXELS]).is_err());
        assert!(matches!(
            RawThermalFrame::new(160, 120, vec![0; 10]),
            Err(ThermalError::PixelCount { .. })
        ));
    }

    #[test]
    fn mean_matches_pixel_mean() {
        let pixels: Vec<u16> = (0..FRAME_PIXELS).map(|i| 29000 + (i % 977) as u16).collect();
        let frame = RawThermalFrame::new(160, 120, pixels).unwrap();
        let map = to_celsius(&frame);
        let naive = map.celsius().iter().sum::<f64>() / FRAME_PIXELS as f64;
        assert!(((map.mean_c() - naive) / naive).abs() < 1e-9);
    }

    #[test]
    fn window_examples() {
        let p = WindowParams::default();
        assert_eq!(window_for_mean(37.0, &p).window, ThermalWindow::DEFAULT);
        let d = window_for_mean(26.4, &p);
        assert_eq!(d.window, ThermalWindow { lo: 26.0, hi: 41.0 });
        assert_eq!(d.steps, -4);
        assert!(!d.floor_saturated);
        let d = window_for_mean(-10.0, &p);
        assert_eq!(d.window, ThermalWindow { lo: 0.0, hi: 15.0 });
        assert!(d.floor_saturated);
    }

    #[test]
    fn window_boundaries() {
        let p = WindowParams::default();
        assert_eq!(window_for_mean(30.0, &p).window, ThermalWindow::DEFAULT);
        assert_eq!(window_for_mean(45.0, &p).window, ThermalWindow::DEFAULT);
        assert_eq!(window_for_mean(29.0, &p).window.lo, 29.0);
        assert_eq!(window_for_mean(0.5, &p).window.lo, 0.0);
        assert!(!window_for_mean(0.5, &p).floor_saturated);
        assert!(!window_for_mean(0.0, &p).floor_saturated);
        let up = window_for_mean(47.3, &p);
        assert_eq!(up.window, ThermalWindow { lo: 33.0, hi: 48.0 });
        assert_eq!(up.steps, 3);
    }

    #[test]
    fn window_floor_not_on_step_grid() {
        let p = WindowParams::new(7.0, 0.0).unwrap();
        // 23, 16, 9, 2 then the floor.
        assert_eq!(window_for_mean(1.0, &p).window.lo, 0.0);
        assert!(!window_for_mean(1.0, &p).floor_saturated);
        assert_eq!(window_for_mean(3.0, &p).window.lo, 2.0);
    }

    #[test]
    fn bad_params_rejected() {
        assert!(WindowParams::new(0.0, 0.0).is_err());
        assert!(WindowParams::new(-1.0, 0.0).is_err());
        assert!(WindowParams::new(1.0, 31.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let w = ThermalWindow::DEFAULT;
        assert_eq!(normalize_value(37.5, &w), 0.5);
        assert_eq!(normalize_value(22.0, &w), 0.0);
        assert_eq!(normalize_value(50.0, &w), 1.0);

        let map = TemperatureMap::from_celsius(4, 2, vec![37.0; 8]).unwrap();
        let n = normalize(&map, &w);
        for &v in n.values() {
            assert!((f64::from(v) - 7.0 / 15.0).abs() < 1e-6);
        }
        assert!(n.mask().iter().all(|&m| m));

        let map = TemperatureMap::from_celsius(3, 1, vec![22.0, 30.0, 46.0]).unwrap();
        let n = normalize(&map, &w);
        assert_eq!(n.mask(), &[false, true, false]);
        assert_eq!(n.values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalized_outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u16> = (0..FRAME_PIXELS).map(|i| 29500 + (i % 1700) as u16).collect();
        let frame = RawThermalFrame::new(160, 120, pixels).unwrap();
        let (_, _, n) = process_frame(&frame, &WindowParams::default());

        let tiff_path = dir.path().join("n.tiff");
        write_normalized_tiff(&n, &tiff_path).unwrap();
        let (w, h, values) = read_normalized_tiff(&tiff_path).unwrap();
        assert_eq!((w, h), (160, 120));
        assert_eq!(values, n.values());

        let png_path = dir.path().join("n.png");
        write_normalized_png16(&n, &png_path).unwrap();
        let img = image::open(&png_path).unwrap().into_luma16();
        for (p, v) in img.pixels().zip(n.values()) {
            assert_eq!(p.0[0], (f64::from(*v) * 65535.0).round() as u16);
        }
    }
}
