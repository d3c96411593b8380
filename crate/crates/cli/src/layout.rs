//! Where each subcommand writes under `--out`.

use std::path::{Path, PathBuf};

use thermofuse_core::Modality;
use thermofuse_model::BackboneId;

use crate::config::RunConfig;

#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn converted_dir(&self) -> PathBuf {
        self.root.join("converted")
    }

    pub fn prepare_dir(&self) -> PathBuf {
        self.root.join("prepare")
    }

    pub fn split_path(&self, modality: Modality, seed: u64) -> PathBuf {
        self.root.join("splits").join(format!("{modality}_seed{seed}.json"))
    }

    /// Parent of the fold directories of one (backbone, modality) pair.
    pub fn run_dir(&self, backbone: BackboneId, modality: Modality) -> PathBuf {
        self.root.join("runs").join(run_name(backbone, modality))
    }

    pub fn fold_dir(&self, backbone: BackboneId, modality: Modality, fold: usize) -> PathBuf {
        self.run_dir(backbone, modality).join(format!("fold_{fold}"))
    }

    pub fn eval_dir(&self, backbone: BackboneId, modality: Modality) -> PathBuf {
        self.root.join("eval").join(run_name(backbone, modality))
    }

    pub fn matrix_dir(&self) -> PathBuf {
        self.root.join("matrix")
    }

    pub fn gradcam_dir(&self, backbone: BackboneId, modality: Modality) -> PathBuf {
        self.root.join("gradcam").join(run_name(backbone, modality))
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.root.join("bench")
    }

    pub fn manifest(&self, config: &RunConfig) -> PathBuf {
        config
            .data
            .manifest
            .clone()
            .unwrap_or_else(|| self.synth_dir().join("manifest.csv"))
    }
}

pub fn run_name(backbone: BackboneId, modality: Modality) -> String {
    format!("{backbone}_{modality}")
}

/// Table label such as `VGG16 RGB+Thermal`.
pub fn run_label(backbone: BackboneId, modality: Modality) -> String {
    format!("{} {}", backbone.display_name(), modality.display_name())
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)
}

/// The resolved configuration and a description of the environment, next to a run's outputs.
pub fn write_provenance(dir: &Path, config: &RunConfig) -> std::io::Result<()> {
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let args: Vec<String> = std::env::args().collect();
    let seed = std::env::var(crate::config::SEED_ENV).unwrap_or_default();
    let env = format!(
        "thermofuse {}\nos {}\narch {}\nthreads {threads}\ncommand {}\n{}={seed}\n",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH,
        args.join(" "),
        crate::config::SEED_ENV,
    );
    write_text(&dir.join("env.txt"), &env)
}
