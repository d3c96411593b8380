//! Grouped bar chart of accuracies, drawn straight into an RGB image.
//!
//! The image carries no text; [`legend`] describes the groups and colours.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

/// Bars per group in `series` order, one group per entry of `groups`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedBars {
    pub groups: Vec<String>,
    pub series: Vec<String>,
    /// `values[group][series]` in [0, 1]; `None` leaves a gap.
    pub values: Vec<Vec<Option<f64>>>,
}

pub const PLOT_HEIGHT: u32 = 300;
const MARGIN_LEFT: u32 = 40;
const MARGIN_RIGHT: u32 = 20;
const MARGIN_TOP: u32 = 20;
const MARGIN_BOTTOM: u32 = 30;
const BAR_WIDTH: u32 = 18;
const BAR_GAP: u32 = 2;
const GROUP_PAD: u32 = 14;

pub const SERIES_COLORS: [[u8; 3]; 6] = [
    [0x1f, 0x77, 0xb4],
    [0xff, 0x7f, 0x0e],
    [0x2c, 0xa0, 0x2c],
    [0xd6, 0x27, 0x28],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
];
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    /// Row just below the plot; a bar of height `h` fills rows `baseline - h .. baseline`.
    pub baseline: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarRect {
    pub group: usize,
    pub series: usize,
    pub value: f64,
    pub x0: u32,
    pub x1: u32,
    pub height: u32,
}

/// Bar height in pixels for an accuracy in [0, 1].
pub fn bar_height(value: f64) -> u32 {
    (value.clamp(0.0, 1.0) * PLOT_HEIGHT as f64).round() as u32
}

pub fn geometry(bars: &GroupedBars) -> (Canvas, Vec<BarRect>) {
    let n_series = bars.series.len().max(1) as u32;
    let group_width = 2 * GROUP_PAD + n_series * BAR_WIDTH + (n_series - 1) * BAR_GAP;
    let canvas = Canvas {
        width: MARGIN_LEFT + group_width * bars.groups.len().max(1) as u32 + MARGIN_RIGHT,
        height: MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM,
        baseline: MARGIN_TOP + PLOT_HEIGHT,
    };
    let mut rects = Vec::new();
    for (g, row) in bars.values.iter().enumerate() {
        let left = MARGIN_LEFT + g as u32 * group_width + GROUP_PAD;
        for (s, value) in row.iter().enumerate() {
            if let Some(v) = *value {
                let x0 = left + s as u32 * (BAR_WIDTH + BAR_GAP);
                rects.push(BarRect {
                    group: g,
                    series: s,
                    value: v,
                    x0,
                    x1: x0 + BAR_WIDTH,
                    height: bar_height(v),
                });
            }
        }
    }
    (canvas, rects)
}

pub fn series_color(series: usize) -> Rgb<u8> {
    Rgb(SERIES_COLORS[series % SERIES_COLORS.len()])
}

pub fn render(bars: &GroupedBars) -> RgbImage {
    let (canvas, rects) = geometry(bars);
    let mut img = RgbImage::from_pixel(canvas.width, canvas.height, Rgb([255, 255, 255]));
    let x_end = canvas.width - MARGIN_RIGHT;
    for q in 1..=4 {
        let y = canvas.baseline - PLOT_HEIGHT * q / 4;
        for x in MARGIN_LEFT..x_end {
            img.put_pixel(x, y, GRID);
        }
    }
    for r in &rects {
        let color = series_color(r.series);
        for y in canvas.baseline - r.height..canvas.baseline {
            for x in r.x0..r.x1 {
                img.put_pixel(x, y, color);
            }
        }
    }
    for x in MARGIN_LEFT - 1..x_end {
        img.put_pixel(x, canvas.baseline, AXIS);
    }
    for y in MARGIN_TOP..=canvas.baseline {
        img.put_pixel(MARGIN_LEFT - 1, y, AXIS);
    }
    for q in 0..=4 {
        let y = canvas.baseline - PLOT_HEIGHT * q / 4;
        for x in MARGIN_LEFT - 6..MARGIN_LEFT - 1 {
            img.put_pixel(x, y, AXIS);
        }
    }
    img
}

/// Markdown key for [`render`]'s output.
pub fn legend(bars: &GroupedBars) -> String {
    let mut out = String::from("Overall test accuracy, y axis from 0 to 1 with grid lines every 0.25.\n\n");
    let _ = writeln!(out, "Groups, left to right: {}.\n", bars.groups.join(", "));
    out.push_str("| Series | Colour |\n|---|---|\n");
    for (i, s) in bars.series.iter().enumerate() {
        let [r, g, b] = series_color(i).0;
        let _ = writeln!(out, "| {s} | #{r:02x}{g:02x}{b:02x} |");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heights_scale_with_value() {
        assert_eq!(bar_height(0.0), 0);
        assert_eq!(bar_height(1.0), PLOT_HEIGHT);
        assert_eq!(bar_height(0.5), PLOT_HEIGHT / 2);
        assert_eq!(bar_height(1.7), PLOT_HEIGHT);
    }

    #[test]
    fn missing_values_leave_gaps() {
        let bars = GroupedBars {
            groups: vec!["a".into(), "b".into()],
            series: vec!["x".into(), "y".into()],
            values: vec![vec![Some(0.5), None], vec![Some(0.25), Some(1.0)]],
        };
        let (canvas, rects) = geometry(&bars);
        assert_eq!(rects.len(), 3);
        assert!(rects.iter().all(|r| r.x1 < canvas.width));
        assert!(rects.windows(2).all(|w| w[0].x1 <= w[1].x0));
    }
}
