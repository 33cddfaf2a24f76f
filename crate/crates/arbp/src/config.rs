//! Run configuration, loadable from JSON and overridable from the command line.

use std::path::{Path, PathBuf};

use arbp_core::sampling::SmcConfig;
use arbp_core::{InitialDensity, KernelKind, ModelKind, OptimizerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What is being modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Density,
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub kernel: KernelKind,
    pub task: TaskKind,
    /// `M`, the number of sample/feature permutations averaged at evaluation.
    pub permutations: usize,
    pub seed: u64,
    pub runs: usize,
    /// Fraction of rows used for training when no test file is given.
    pub train_fraction: f64,
    /// Skip bandwidth tuning and use the initial parameters.
    pub no_tuning: bool,
    pub optimizer: OptimizerConfig,
    pub sampling: SmcConfig,
    pub initial: InitialDensity,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::ArBp,
            kernel: KernelKind::Rbf,
            task: TaskKind::Density,
            permutations: arbp_core::engine::DEFAULT_PERMUTATIONS,
            seed: 0,
            runs: 5,
            train_fraction: 0.5,
            no_tuning: false,
            optimizer: OptimizerConfig::default(),
            sampling: SmcConfig::default(),
            initial: InitialDensity::Normal,
            train: None,
            test: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            detail: format!("invalid config: {e}"),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::Usage("permutations must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Usage("runs must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Usage("train fraction must lie in (0, 1)".into()));
        }
        if self.task != TaskKind::Density && self.initial != InitialDensity::Normal {
            return Err(Error::Usage("supervised tasks use the normal initial density".into()));
        }
        Ok(())
    }
}

/// Parses a model kind for clap.
pub fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("expected one of r-bp, rd-bp, ar-bp, ard-bp, arnet-bp; got {s}"))
}

/// Parses a kernel kind for clap.
pub fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    KernelKind::parse(s).ok_or_else(|| format!("expected rbf or rq; got {s}"))
}
