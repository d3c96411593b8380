//! `bench`: single-image inference latency per backbone and modality.

use thermofuse_core::bench::{markdown_table, time_inference, TimingReport};
use thermofuse_core::dataset::FusedSample;
use thermofuse_core::raster::ImageTensor;
use thermofuse_core::{Grade, Modality};
use thermofuse_model::{build_model, count_params, predict, BackboneId, Model};

use crate::config::RunConfig;
use crate::layout::{write_provenance, write_text, Layout};

/// A fixed, input-independent test pattern of the model's input shape.
fn probe_sample(model: &Model) -> FusedSample {
    let (c, h, w) = model.input_shape();
    let data = (0..c * h * w).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    FusedSample {
        tensor: ImageTensor::from_vec(c, h, w, data).expect("shape matches data"),
        label: Grade::ALL[0],
        modality: model.modality(),
    }
}

pub fn bench_one(config: &RunConfig, backbone: BackboneId, modality: Modality) -> anyhow::Result<TimingReport> {
    let mut options = config.model_options(backbone);
    options.input_size = config.bench.input_size.or(options.input_size);
    let model = build_model(backbone, modality, &options)?;
    let sample = probe_sample(&model);
    predict(&model, &sample)?;
    let mut report = time_inference(
        backbone.as_str(),
        modality.as_str(),
        config.bench.warmup,
        config.bench.iterations,
        || predict(&model, &sample),
    );
    report.params = Some(count_params(&model).total());
    Ok(report)
}

pub fn cmd_bench(config: &RunConfig, layout: &Layout) -> anyhow::Result<Vec<TimingReport>> {
    let mut reports = Vec::new();
    for &backbone in &config.bench.backbones {
        for &modality in &config.bench.modalities {
            let r = bench_one(config, backbone, modality)?;
            log::info!("{backbone} {modality}: {:.2} ms mean, {:.1} FPS", r.mean_ms, r.fps);
            reports.push(r);
        }
    }
    let dir = layout.bench_dir();
    write_provenance(&dir, config)?;
    write_text(
        &dir.join("bench.json"),
        &(serde_json::to_string_pretty(&reports)? + "\n"),
    )?;
    let table = markdown_table(&reports);
    write_text(&dir.join("bench.md"), &table)?;
    print!("{table}");
    Ok(reports)
}
