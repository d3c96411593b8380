//! `train`, `eval` and `matrix`: cross-validated training and its reports.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use thermofuse_core::dataset::{
    class_weights, load_manifest, make_split, ClassWeights, DatasetManifest, SampleBuilder, SplitPlan,
};
use thermofuse_core::metrics::{aggregate_folds, evaluate, MetricsReport};
use thermofuse_core::Modality;
use thermofuse_model::train::{predict_ids, SampleSource};
use thermofuse_model::{build_model, train, BackboneId, Model, TrainedRun};

use crate::chart::{self, GroupedBars};
use crate::config::RunConfig;
use crate::layout::{run_label, write_provenance, write_text, Layout};

/// Written last into a fold directory; its presence marks the fold as done.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub backbone: BackboneId,
    pub modality: Modality,
    pub fold: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub train_samples_seen: usize,
    pub test_samples: usize,
    pub test_accuracy: f64,
    pub train_seconds: f64,
}

pub fn sample_source(
    config: &RunConfig,
    manifest: DatasetManifest,
    backbone: BackboneId,
    modality: Modality,
) -> SampleSource {
    let builder = SampleBuilder {
        input_size: config.input_size(backbone),
        window: config.data.window,
    };
    SampleSource::with_builder(manifest, modality, builder)
}

/// Metrics of `model` on the held-out test ids.
pub fn test_report(model: &Model, source: &SampleSource, split: &SplitPlan) -> anyhow::Result<MetricsReport> {
    let ids: Vec<&str> = split.test_ids().iter().map(String::as_str).collect();
    let preds = predict_ids(model, source, &ids)?;
    Ok(evaluate(&preds.truth, &preds.predicted(), Some(&preds.probs))?)
}

/// Trains one fold from a fresh model and scores it on the test ids.
pub fn train_fold(
    config: &RunConfig,
    backbone: BackboneId,
    source: &SampleSource,
    split: &SplitPlan,
    weights: &ClassWeights,
    fold: usize,
) -> anyhow::Result<(TrainedRun, MetricsReport)> {
    let modality = source.modality();
    let model = build_model(backbone, modality, &config.model_options(backbone))?;
    let run = train(
        model,
        source,
        split,
        fold,
        weights,
        &config.train_config(backbone, modality),
    )?;
    let report = test_report(&run.model, source, split)?;
    Ok((run, report))
}

fn read_report(path: &Path) -> anyhow::Result<MetricsReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MetricsReport::from_json(&text)?)
}

fn write_report(dir: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    report.write_json(dir.join("metrics.json"))?;
    report.write_csv(dir.join("metrics.csv"))?;
    Ok(())
}

/// Aggregate metrics plus a one-row comparison table.
fn write_summary(dir: &Path, label: &str, reports: &[MetricsReport]) -> anyhow::Result<MetricsReport> {
    let aggregate = aggregate_folds(reports)?;
    aggregate.write_json(dir.join("aggregate_metrics.json"))?;
    let table = format!(
        "{}\n{}\n\n{}",
        MetricsReport::MARKDOWN_HEADER,
        aggregate.markdown_row(label),
        aggregate.per_class_markdown()
    );
    write_text(&dir.join("summary.md"), &table)?;
    Ok(aggregate)
}

/// Cross-validation for one (backbone, modality) pair. Folds whose `run.json`
/// already exists are not retrained.
pub fn train_eval(
    config: &RunConfig,
    layout: &Layout,
    backbone: BackboneId,
    modality: Modality,
) -> anyhow::Result<MetricsReport> {
    let manifest_path = layout.manifest(config);
    let manifest = load_manifest(&manifest_path).with_context(|| format!("loading {}", manifest_path.display()))?;
    let weights = class_weights(&manifest.counts(modality))?;
    let split = make_split(&manifest, modality, config.split.seed)?;
    let dir = layout.run_dir(backbone, modality);
    std::fs::create_dir_all(&dir)?;
    split.write(dir.join("split.json"))?;
    write_provenance(&dir, config)?;
    let source = sample_source(config, manifest, backbone, modality);

    let mut reports = Vec::with_capacity(config.train.folds.len());
    for &fold in &config.train.folds {
        let fold_dir = layout.fold_dir(backbone, modality, fold);
        if fold_dir.join("run.json").is_file() {
            log::info!("{}: fold {fold} already complete, skipping", dir.display());
            reports.push(read_report(&fold_dir.join("metrics.json"))?);
            continue;
        }
        std::fs::create_dir_all(&fold_dir)?;
        write_provenance(&fold_dir, config)?;
        let start = Instant::now();
        let (run, report) = train_fold(config, backbone, &source, &split, &weights, fold)?;
        let record = RunRecord {
            backbone,
            modality,
            fold,
            seed: config.train.seed,
            split_seed: config.split.seed,
            epochs_run: run.history.len(),
            best_epoch: run.best_epoch,
            train_samples_seen: run.seen_ids.len(),
            test_samples: split.test_ids().len(),
            test_accuracy: report.accuracy,
            train_seconds: start.elapsed().as_secs_f64(),
        };
        run.model.save(fold_dir.join("best.ckpt"))?;
        run.write_history(fold_dir.join("history.csv"))?;
        write_report(&fold_dir, &report)?;
        write_text(
            &fold_dir.join("run.json"),
            &(serde_json::to_string_pretty(&record)? + "\n"),
        )?;
        log::info!(
            "{backbone} {modality} fold {fold}: test accuracy {:.4} after {} epochs",
            report.accuracy,
            record.epochs_run
        );
        reports.push(report);
    }
    write_summary(&dir, &run_label(backbone, modality), &reports)
}

pub fn cmd_train(config: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let report = train_eval(config, layout, config.model.backbone, config.model.modality)?;
    println!("{}", MetricsReport::MARKDOWN_HEADER);
    println!(
        "{}",
        report.markdown_row(&run_label(config.model.backbone, config.model.modality))
    );
    Ok(())
}

/// Re-scores every saved fold checkpoint on the test ids of the stored split.
pub fn cmd_eval(config: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let (backbone, modality) = (config.model.backbone, config.model.modality);
    let run_dir = layout.run_dir(backbone, modality);
    let split = SplitPlan::read(run_dir.join("split.json"))
        .with_context(|| format!("no trained run in {}", run_dir.display()))?;
    let manifest = load_manifest(layout.manifest(config))?;
    let source = sample_source(config, manifest, backbone, modality);
    let out = layout.eval_dir(backbone, modality);
    let mut reports = Vec::new();
    for fold in 1..=thermofuse_core::dataset::NUM_FOLDS {
        let ckpt = layout.fold_dir(backbone, modality, fold).join("best.ckpt");
        if !ckpt.is_file() {
            continue;
        }
        let model = build_model(backbone, modality, &config.model_options(backbone))?;
        model.load(&ckpt)?;
        let report = test_report(&model, &source, &split)?;
        let dir = out.join(format!("fold_{fold}"));
        std::fs::create_dir_all(&dir)?;
        write_report(&dir, &report)?;
        log::info!("fold {fold}: test accuracy {:.4}", report.accuracy);
        reports.push(report);
    }
    if reports.is_empty() {
        anyhow::bail!("no checkpoints under {}", run_dir.display());
    }
    write_provenance(&out, config)?;
    write_summary(&out, &run_label(backbone, modality), &reports)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backbone: BackboneId,
    pub modality: Modality,
    pub label: String,
    pub accuracy: f64,
    pub mcc: f64,
    pub report: MetricsReport,
}

/// Every (backbone, modality) pair the sweep covers, backbone-major.
pub fn sweep(config: &RunConfig) -> Vec<(BackboneId, Modality)> {
    let m = &config.model;
    m.sweep_backbones
        .iter()
        .flat_map(|&b| m.sweep_modalities.iter().map(move |&mo| (b, mo)))
        .collect()
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{}\n", MetricsReport::MARKDOWN_HEADER);
    for r in rows {
        out.push_str(&r.report.markdown_row(&r.label));
        out.push('\n');
    }
    out
}

/// Accuracy per backbone (groups) and modality (series).
pub fn accuracy_bars(config: &RunConfig, rows: &[ComparisonRow]) -> GroupedBars {
    let m = &config.model;
    GroupedBars {
        groups: m.sweep_backbones.iter().map(|b| b.display_name().to_string()).collect(),
        series: m
            .sweep_modalities
            .iter()
            .map(|s| s.display_name().to_string())
            .collect(),
        values: m
            .sweep_backbones
            .iter()
            .map(|&b| {
                m.sweep_modalities
                    .iter()
                    .map(|&s| {
                        rows.iter()
                            .find(|r| r.backbone == b && r.modality == s)
                            .map(|r| r.accuracy)
                    })
                    .collect()
            })
            .collect(),
    }
}

pub fn cmd_matrix(config: &RunConfig, layout: &Layout) -> anyhow::Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for (backbone, modality) in sweep(config) {
        let report = train_eval(config, layout, backbone, modality)?;
        rows.push(ComparisonRow {
            backbone,
            modality,
            label: run_label(backbone, modality),
            accuracy: report.accuracy,
            mcc: report.mcc,
            report,
        });
    }
    let dir = layout.matrix_dir();
    write_provenance(&dir, config)?;
    write_text(&dir.join("comparison.md"), &comparison_markdown(&rows))?;
    write_text(
        &dir.join("comparison.json"),
        &(serde_json::to_string_pretty(&rows)? + "\n"),
    )?;
    let bars = accuracy_bars(config, &rows);
    chart::render(&bars).save_with_format(dir.join("fig5.png"), image::ImageFormat::Png)?;
    write_text(&dir.join("fig5_legend.md"), &chart::legend(&bars))?;
    print!("{}", comparison_markdown(&rows));
    Ok(rows)
}
