//! `gradcam`: heat maps for test samples from a trained fold.

use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::{load_manifest, SplitPlan};
use thermofuse_core::Grade;
use thermofuse_model::{build_model, grad_cam, render_overlay};

use crate::config::RunConfig;
use crate::layout::{write_provenance, write_text, Layout};
use crate::runs::sample_source;

/// Sidecar written next to each overlay. `argmax_xy` is in model-input pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamSidecar {
    pub layer_id: String,
    pub target_class: Grade,
    pub heat_min: f32,
    pub heat_max: f32,
    pub argmax_xy: [usize; 2],
}

pub fn cmd_gradcam(config: &RunConfig, layout: &Layout) -> anyhow::Result<Vec<PathBuf>> {
    let (backbone, modality) = (config.model.backbone, config.model.modality);
    let fold = config.eval.fold;
    let ckpt = layout.fold_dir(backbone, modality, fold).join("best.ckpt");
    if !ckpt.is_file() {
        anyhow::bail!("no checkpoint at {}; run `train` first", ckpt.display());
    }
    let split = SplitPlan::read(layout.run_dir(backbone, modality).join("split.json"))?;
    let model = build_model(backbone, modality, &config.model_options(backbone))?;
    model.load(&ckpt)?;
    let source = sample_source(config, load_manifest(layout.manifest(config))?, backbone, modality);

    let ids: Vec<String> = if config.eval.samples.is_empty() {
        split.test_ids().iter().take(config.eval.count).cloned().collect()
    } else {
        config.eval.samples.clone()
    };
    let layer = config
        .eval
        .layer
        .clone()
        .unwrap_or_else(|| backbone.spec().cam_layer.to_string());
    let root = layout.gradcam_dir(backbone, modality);
    write_provenance(&root, config)?;
    let mut written = Vec::with_capacity(ids.len());
    for id in &ids {
        let sample = source.get(id).with_context(|| format!("loading sample {id}"))?;
        let target = match config.eval.target_class {
            Some(g) => Grade::new(g).context("eval.target_class is not a grade")?,
            None => sample.label,
        };
        let cam = grad_cam(&model, &sample, target, &layer)?;
        let dir = root.join(id);
        std::fs::create_dir_all(&dir)?;
        let png = dir.join(format!("{id}_{}_cam.png", target.value()));
        render_overlay(&cam, &sample, &png)?;
        let (x, y) = cam.argmax_xy();
        let sidecar = CamSidecar {
            layer_id: cam.layer_id.clone(),
            target_class: target,
            heat_min: cam.heat_min(),
            heat_max: cam.heat_max(),
            argmax_xy: [x, y],
        };
        write_text(&dir.join("cam.json"), &(serde_json::to_string_pretty(&sidecar)? + "\n"))?;
        written.push(png);
    }
    log::info!("wrote {} Grad-CAM overlays under {}", written.len(), root.display());
    Ok(written)
}
