//! Versioned JSON model files.
//!
//! Floats are written with round-trip precision, so a loaded model predicts
//! bit-identically to the one that was saved.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelMap, NormalizationTransform};
use crate::kernel::Kernel;
use crate::loss::LossSpec;
use crate::trainer::{Diagnostics, DualRecord, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format_version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u64 },
    #[error("inconsistent model file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub kernel: Kernel,
    pub loss: LossSpec,
    pub c0: f64,
    pub balance_classes: bool,
    pub normalizer: Option<NormalizationTransform>,
    pub label_map: Option<LabelMap>,
    /// One row per support point, in normalized coordinates.
    pub support_x: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub bias: f64,
    pub diagnostics: Diagnostics,
    pub dual: Option<DualRecord>,
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel, label_map: Option<&LabelMap>) -> Self {
        let support_x = (0..model.support_x.nrows())
            .map(|i| model.support_x.row(i).iter().copied().collect())
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            kernel: model.kernel,
            loss: model.loss.clone(),
            c0: model.c0,
            balance_classes: model.balance_classes,
            normalizer: model.normalizer.clone(),
            label_map: label_map.cloned(),
            support_x,
            beta: model.beta.clone(),
            bias: model.bias,
            diagnostics: model.diagnostics.clone(),
            dual: model.dual.clone(),
        }
    }

    pub fn into_model(self) -> Result<(TrainedModel, Option<LabelMap>), ModelFileError> {
        if self.support_x.len() != self.beta.len() {
            return Err(ModelFileError::Invalid(format!(
                "{} support points but {} coefficients",
                self.support_x.len(),
                self.beta.len()
            )));
        }
        let n = match (&self.normalizer, self.support_x.first()) {
            (_, Some(row)) => row.len(),
            (Some(norm), None) => norm.n_features(),
            (None, None) => 0,
        };
        if self.support_x.iter().any(|r| r.len() != n) {
            return Err(ModelFileError::Invalid("support rows differ in length".into()));
        }
        if let Some(norm) = &self.normalizer {
            if norm.n_features() != n || norm.maxs.len() != n {
                return Err(ModelFileError::Invalid(format!(
                    "normalizer has {} features, support points have {n}",
                    norm.n_features()
                )));
            }
        }
        self.kernel.validate().map_err(|e| ModelFileError::Invalid(e.to_string()))?;
        let flat: Vec<f64> = self.support_x.iter().flatten().copied().collect();
        let model = TrainedModel {
            kernel: self.kernel,
            loss: self.loss,
            c0: self.c0,
            balance_classes: self.balance_classes,
            normalizer: self.normalizer,
            support_x: DMatrix::from_row_slice(self.beta.len(), n, &flat),
            beta: self.beta,
            bias: self.bias,
            diagnostics: self.diagnostics,
            dual: self.dual,
        };
        Ok((model, self.label_map))
    }
}

pub fn to_json(model: &TrainedModel, label_map: Option<&LabelMap>) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model, label_map)).expect("model serializes") + "\n"
}

/// Parses a model file. The version is checked before the rest of the
/// document, so files from other versions get a clear error.
pub fn from_json(text: &str) -> Result<(TrainedModel, Option<LabelMap>), ModelFileError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(found) => return Err(ModelFileError::UnsupportedVersion { found }),
        None => return Err(ModelFileError::Invalid("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(value)?;
    file.into_model()
}

/// Writes the model next to `path` and renames it into place, so a failed
/// write never leaves a partial file behind.
pub fn save(model: &TrainedModel, label_map: Option<&LabelMap>, path: &Path) -> Result<(), ModelFileError> {
    crate::modelsel::write_atomic(path, to_json(model, label_map).as_bytes()).map_err(|e| match e {
        crate::modelsel::ModelSelError::Io { path, source } => ModelFileError::Io { path, source },
        other => ModelFileError::Invalid(other.to_string()),
    })
}

pub fn load(path: &Path) -> Result<(TrainedModel, Option<LabelMap>), ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io { path: path.to_path_buf(), source })?;
    from_json(&text)
}
