//! `synth`, `prepare`, `split` and `convert`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use thermofuse_core::dataset::{class_weights, load_manifest, make_split};
use thermofuse_core::synth;
use thermofuse_core::thermal::{self, WindowParams, WindowSidecar};
use thermofuse_core::{Modality, NUM_CLASSES};

use crate::config::{RunConfig, ThermalFormat};
use crate::layout::{write_provenance, write_text, Layout};

pub fn cmd_synth(config: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let dir = layout.synth_dir();
    let out = synth::generate(&config.synth, &dir)?;
    write_provenance(&dir, config)?;
    log::info!("wrote {} samples to {}", out.manifest.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PrepareSummary {
    manifest: PathBuf,
    total: usize,
    thermal_valid: usize,
    counts: BTreeMap<Modality, [usize; NUM_CLASSES]>,
    /// Absent for a modality with an empty class.
    class_weights: BTreeMap<Modality, Option<[f64; NUM_CLASSES]>>,
}

/// Checks that every file in the manifest exists and summarises class balance.
pub fn cmd_prepare(config: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let path = layout.manifest(config);
    let manifest = load_manifest(&path).with_context(|| format!("loading {}", path.display()))?;
    manifest.verify_files()?;
    let counts: BTreeMap<_, _> = Modality::ALL.iter().map(|&m| (m, manifest.counts(m))).collect();
    let summary = PrepareSummary {
        manifest: path,
        total: manifest.len(),
        thermal_valid: manifest
            .records()
            .iter()
            .filter(|r| r.in_modality(Modality::Thermal))
            .count(),
        class_weights: counts
            .iter()
            .map(|(&m, c)| (m, class_weights(c).ok().map(|w| w.0)))
            .collect(),
        counts,
    };
    let dir = layout.prepare_dir();
    write_text(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    log::info!(
        "{} samples, {} with a valid thermal frame",
        summary.total,
        summary.thermal_valid
    );
    Ok(())
}

pub fn cmd_split(config: &RunConfig, layout: &Layout) -> anyhow::Result<PathBuf> {
    let manifest = load_manifest(layout.manifest(config))?;
    let modality = config.model.modality;
    let plan = make_split(&manifest, modality, config.split.seed)?;
    let path = layout.split_path(modality, config.split.seed);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    plan.write(&path)?;
    let sizes = plan.fold_sizes();
    log::info!(
        "{modality}: {} test samples, folds of {sizes:?} -> {}",
        plan.test_ids().len(),
        path.display()
    );
    Ok(path)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct ConvertSummary {
    pub converted: usize,
    pub failed: usize,
}

fn is_tiff(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

/// Normalises every raw TIFF in `in_dir` into `out_dir`, each with a JSON window sidecar.
///
/// A file that fails is logged and counted; the rest still convert.
pub fn convert_dir(
    in_dir: &Path,
    out_dir: &Path,
    format: ThermalFormat,
    params: &WindowParams,
) -> anyhow::Result<ConvertSummary> {
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(in_dir)
        .with_context(|| format!("reading {}", in_dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    inputs.retain(|p| p.is_file() && is_tiff(p));
    inputs.sort();
    let mut summary = ConvertSummary::default();
    if inputs.is_empty() {
        log::warn!("no TIFF files in {}", in_dir.display());
        return Ok(summary);
    }
    std::fs::create_dir_all(out_dir)?;
    for input in &inputs {
        match convert_one(input, out_dir, format, params) {
            Ok(()) => summary.converted += 1,
            Err(e) => {
                log::error!("{}: {e:#}", input.display());
                summary.failed += 1;
            }
        }
    }
    log::info!(
        "converted {} of {} files into {}",
        summary.converted,
        inputs.len(),
        out_dir.display()
    );
    Ok(summary)
}

fn convert_one(input: &Path, out_dir: &Path, format: ThermalFormat, params: &WindowParams) -> anyhow::Result<()> {
    let frame = thermal::read_raw(input)?;
    let (_, decision, normalized) = thermal::process_frame(&frame, params);
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .context("file name is not UTF-8")?;
    let target = out_dir.join(format!("{stem}.{}", format.extension()));
    match format {
        ThermalFormat::Tiff => thermal::write_normalized_tiff(&normalized, &target)?,
        ThermalFormat::Png16 => thermal::write_normalized_png16(&normalized, &target)?,
    }
    let sidecar = WindowSidecar::from(&decision);
    std::fs::write(
        out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(())
}

pub fn cmd_convert(config: &RunConfig, layout: &Layout, input: Option<&Path>) -> anyhow::Result<bool> {
    let in_dir = input
        .map(Path::to_path_buf)
        .or_else(|| config.data.input_dir.clone())
        .unwrap_or_else(|| layout.synth_dir().join("thermal"));
    let summary = convert_dir(
        &in_dir,
        &layout.converted_dir(),
        config.data.format,
        &config.data.window,
    )?;
    if summary.failed > 0 {
        log::error!("{} file(s) failed to convert", summary.failed);
    }
    Ok(summary.failed == 0)
}
