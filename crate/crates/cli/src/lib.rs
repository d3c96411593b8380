//! The `thermofuse` command line: every pipeline stage as a subcommand, all
//! writing under one output tree and driven by a TOML [`config::RunConfig`].

pub mod bench;
pub mod chart;
pub mod config;
pub mod data;
pub mod explain;
pub mod layout;
pub mod runs;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thermofuse_core::Modality;
use thermofuse_model::BackboneId;

use crate::config::{Overrides, RunConfig};
use crate::layout::Layout;

#[derive(Debug, Parser)]
#[command(
    name = "thermofuse",
    version,
    about = "RGB + thermal diabetic foot ulcer staging pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces every seed in the configuration (and THERMOFUSE_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// rgb, thermal or fused; overrides model.modality.
    #[arg(long, global = true, value_parser = parse_modality)]
    pub modality: Option<Modality>,
    /// Backbone name such as vgg16 or mini_vgg; overrides model.backbone.
    #[arg(long, global = true)]
    pub backbone: Option<BackboneId>,
    /// Root of every output.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalise raw thermal TIFFs and write window sidecars.
    Convert {
        /// Directory of raw TIFFs; overrides data.input_dir.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Verify the manifest's files and summarise class balance.
    Prepare,
    /// Write the stratified test/fold assignment.
    Split,
    /// Cross-validated training and test evaluation for one backbone and modality.
    Train,
    /// Re-score saved checkpoints on the test set.
    Eval,
    /// Train every backbone and modality of the sweep and compare them.
    Matrix,
    /// Grad-CAM overlays for test samples.
    Gradcam,
    /// Measure single-image inference latency.
    Bench,
    /// Generate the synthetic dataset.
    Synth,
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    Modality::ALL
        .into_iter()
        .find(|m| m.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown modality `{s}` (expected rgb, thermal or fused)"))
}

/// The configuration after file, environment and flags are combined.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply(&Overrides {
        seed: cli.seed.or(config::env_seed()?),
        backbone: cli.backbone,
        modality: cli.modality,
    });
    config.validate()?;
    Ok(config)
}

/// Runs one subcommand. `Ok(false)` means it finished but some items failed.
pub fn run(cli: &Cli) -> anyhow::Result<bool> {
    let config = resolve_config(cli)?;
    let layout = Layout::new(&cli.out);
    match &cli.command {
        Command::Convert { input } => return data::cmd_convert(&config, &layout, input.as_deref()),
        Command::Prepare => data::cmd_prepare(&config, &layout)?,
        Command::Split => {
            data::cmd_split(&config, &layout)?;
        }
        Command::Train => runs::cmd_train(&config, &layout)?,
        Command::Eval => runs::cmd_eval(&config, &layout)?,
        Command::Matrix => {
            runs::cmd_matrix(&config, &layout)?;
        }
        Command::Gradcam => {
            explain::cmd_gradcam(&config, &layout)?;
        }
        Command::Bench => {
            bench::cmd_bench(&config, &layout)?;
        }
        Command::Synth => data::cmd_synth(&config, &layout)?,
    }
    Ok(true)
}
