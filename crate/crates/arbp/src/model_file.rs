//! Versioned JSON model files.
//!
//! Layout (schema version 1):
//!
//! ```text
//! {
//!   "format": "arbp-model",
//!   "version": 1,
//!   "task": "density" | "regression" | "classification",
//!   "model": "ar-bp", "kernel": "rbf" | null,
//!   "config": { ...run configuration echo... },
//!   "standardization": { ... } | null,
//!   "response": { "mean": .., "sd": .. } | null,
//!   "bandwidth": { "kind": "rbf", ... },
//!   "response_rho0": null,
//!   "initial": "normal", "seed": 0,
//!   "train": { "shape": [n, w], "data": [...] },
//!   "permutations": [ { "sample_order": [...], "feature_order": [...] }, ... ],
//!   "state": { "shape": [M, n, d] | [M, n], "data": [...] },
//!   "prequential": { "shape": [M, n], "data": [...] } | null
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reloaded model
//! evaluates bit-identically.

use std::path::Path;

use arbp_core::data::Standardization;
use arbp_core::supervised::SupervisedModel;
use arbp_core::{BandwidthModel, FittedDensityModel, InitialDensity, KernelKind, ModelKind, PermutationPair, Task};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TaskKind};
use crate::error::{Error, Result};

pub const FORMAT: &str = "arbp-model";
pub const VERSION: u32 = 1;

/// A flat array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data }
    }

    fn check(&self, name: &str, path: &Path) -> Result<()> {
        if self.shape.iter().product::<usize>() != self.data.len() {
            return Err(schema(path, format!("{name} shape {:?} does not match {} values", self.shape, self.data.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseStats {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub task: TaskKind,
    pub model: ModelKind,
    pub kernel: Option<KernelKind>,
    pub config: RunConfig,
    pub standardization: Option<Standardization>,
    pub response: Option<ResponseStats>,
    pub bandwidth: BandwidthModel,
    pub response_rho0: Option<f64>,
    pub initial: InitialDensity,
    pub seed: u64,
    pub train: Tensor,
    pub permutations: Vec<PermutationPair>,
    pub state: Tensor,
    pub prequential: Option<Tensor>,
}

/// A model loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Density(FittedDensityModel),
    Supervised(SupervisedModel),
}

impl StoredModel {
    pub fn bandwidth(&self) -> &BandwidthModel {
        match self {
            StoredModel::Density(m) => m.bandwidth(),
            StoredModel::Supervised(m) => m.bandwidth(),
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            StoredModel::Density(_) => TaskKind::Density,
            StoredModel::Supervised(m) => match m.task() {
                Task::Regression => TaskKind::Regression,
                Task::Classification => TaskKind::Classification,
            },
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        self.bandwidth().model_kind()
    }
}

fn schema(path: &Path, detail: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

impl ModelFile {
    pub fn from_density(model: &FittedDensityModel, config: &RunConfig) -> Self {
        let (m, n, d) = (model.num_permutations(), model.n(), model.dim());
        Self {
            format: FORMAT.into(),
            version: VERSION,
            task: TaskKind::Density,
            model: model.bandwidth().model_kind(),
            kernel: model.bandwidth().kernel_kind(),
            config: config.clone(),
            standardization: model.standardization().cloned(),
            response: None,
            bandwidth: model.bandwidth().clone(),
            response_rho0: None,
            initial: model.initial(),
            seed: model.seed(),
            train: Tensor::new(vec![n, d], model.train().to_vec()),
            permutations: model.permutations().to_vec(),
            state: Tensor::new(vec![m, n, d], model.v_tensor().to_vec()),
            prequential: model
                .prequential_log_densities()
                .map(|p| Tensor::new(vec![m, n], p.to_vec())),
        }
    }

    pub fn from_supervised(model: &SupervisedModel, config: &RunConfig) -> Self {
        let (m, n, d) = (model.permutations().len(), model.n(), model.dim());
        Self {
            format: FORMAT.into(),
            version: VERSION,
            task: match model.task() {
                Task::Regression => TaskKind::Regression,
                Task::Classification => TaskKind::Classification,
            },
            model: model.bandwidth().model_kind(),
            kernel: model.bandwidth().kernel_kind(),
            config: config.clone(),
            standardization: model.covariate_standardization().cloned(),
            response: model.response_stats().map(|(mean, sd)| ResponseStats { mean, sd }),
            bandwidth: model.bandwidth().clone(),
            response_rho0: model.response_rho0(),
            initial: InitialDensity::Normal,
            seed: model.seed(),
            train: Tensor::new(vec![n, d + 1], model.train().to_vec()),
            permutations: model.permutations().to_vec(),
            state: Tensor::new(vec![m, n], model.state().to_vec()),
            prequential: Some(Tensor::new(vec![m, n], model.prequential_log_densities().to_vec())),
        }
    }

    pub fn into_model(self, path: &Path) -> Result<StoredModel> {
        if self.format != FORMAT {
            return Err(schema(path, format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(schema(path, format!("schema version {} is not supported (expected {VERSION})", self.version)));
        }
        self.train.check("train", path)?;
        self.state.check("state", path)?;
        if let Some(p) = &self.prequential {
            p.check("prequential", path)?;
        }
        if self.bandwidth.model_kind() != self.model {
            return Err(schema(path, format!(
                "declared model {} but bandwidth parameters are {}",
                self.model.name(),
                self.bandwidth.model_kind().name()
            )));
        }
        if self.train.shape.len() != 2 {
            return Err(schema(path, "train must be two-dimensional"));
        }
        let width = self.train.shape[1];
        let bad = |e: arbp_core::Error| schema(path, e.to_string());
        Ok(match self.task {
            TaskKind::Density => StoredModel::Density(
                FittedDensityModel::from_parts(
                    self.bandwidth,
                    width,
                    self.initial,
                    self.seed,
                    self.train.data,
                    self.permutations,
                    self.state.data,
                    self.prequential.map(|p| p.data),
                    self.standardization,
                )
                .map_err(bad)?,
            ),
            TaskKind::Regression | TaskKind::Classification => {
                let task = if self.task == TaskKind::Regression {
                    Task::Regression
                } else {
                    Task::Classification
                };
                let preq = self.prequential.ok_or_else(|| schema(path, "supervised models need prequential densities"))?;
                StoredModel::Supervised(
                    SupervisedModel::from_parts(
                        task,
                        self.bandwidth,
                        self.response_rho0,
                        width.checked_sub(1).ok_or_else(|| schema(path, "empty training rows"))?,
                        self.seed,
                        self.train.data,
                        self.permutations,
                        self.state.data,
                        preq.data,
                        self.standardization,
                        self.response.map(|r| (r.mean, r.sd)),
                    )
                    .map_err(bad)?,
                )
            }
        })
    }
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string(file).map_err(|e| schema(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(path, format!("not valid JSON: {e}")))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == VERSION as u64 => {}
        Some(v) => return Err(schema(path, format!("schema version {v} is not supported (expected {VERSION})"))),
        None => return Err(schema(path, "missing schema version")),
    }
    serde_json::from_value(value).map_err(|e| schema(path, e.to_string()))
}

/// Loads a model; with `expected`, refuses files of another model family.
pub fn load_model(path: &Path, expected: Option<ModelKind>) -> Result<StoredModel> {
    let file = load_model_file(path)?;
    if let Some(kind) = expected {
        if file.model != kind {
            return Err(schema(path, format!(
                "file holds a {} model, not {}",
                file.model.name(),
                kind.name()
            )));
        }
    }
    file.into_model(path)
}
