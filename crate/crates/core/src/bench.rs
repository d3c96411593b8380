//! Single-image latency measurement.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WARMUP: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model_id: String,
    pub modality: String,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub fps: f64,
    pub n_warmup: usize,
    pub n_iter: usize,
    pub batch_size: usize,
    /// Backbone plus head parameters, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<u64>,
}

impl TimingReport {
    /// Builds a report from raw per-call durations in milliseconds.
    pub fn from_samples(model_id: &str, modality: &str, n_warmup: usize, samples_ms: &[f64]) -> Self {
        assert!(!samples_ms.is_empty(), "at least one timed iteration is required");
        let mean_ms = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
        let min_ms = samples_ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ms = samples_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            model_id: model_id.to_string(),
            modality: modality.to_string(),
            // Summation rounding can push the mean a hair outside [min, max].
            mean_ms: mean_ms.clamp(min_ms, max_ms),
            min_ms,
            max_ms,
            fps: 1000.0 / mean_ms.clamp(min_ms, max_ms),
            n_warmup,
            n_iter: samples_ms.len(),
            batch_size: 1,
            params: None,
        }
    }
}

/// Runs `n_warmup` untimed calls, then times `n_iter` calls of `infer`.
///
/// `infer` must block until its result is ready.
pub fn time_inference<F, T>(
    model_id: &str,
    modality: &str,
    n_warmup: usize,
    n_iter: usize,
    mut infer: F,
) -> TimingReport
where
    F: FnMut() -> T,
{
    for _ in 0..n_warmup {
        std::hint::black_box(infer());
    }
    let samples: Vec<f64> = (0..n_iter.max(1))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(infer());
            start.elapsed().as_secs_f64() * 1000.0
        })
        .collect();
    TimingReport::from_samples(model_id, modality, n_warmup, &samples)
}

/// Markdown table with parameter counts (M), mean/max/min latency and FPS.
pub fn markdown_table(reports: &[TimingReport]) -> String {
    let mut out = String::from(
        "| Model | Data | Params (M) | Mean (ms) | Max (ms) | Min (ms) | FPS |\n|---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        let params = r
            .params
            .map(|p| format!("{:.2}", p as f64 / 1e6))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            r.model_id, r.modality, params, r.mean_ms, r.max_ms, r.min_ms, r.fps
        );
    }
    out
}
