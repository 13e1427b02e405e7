//! Versioned, self-describing model file.
//!
//! Holds everything prediction needs without the training data: knots,
//! eigenpairs, variance parameters, coefficients, standard-error blocks,
//! group labels, and the column bindings of the training table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisFactory, KnotEigen, KnotSet, RangeSource, ScalingMode};
use crate::error::{Result, SammError};
use crate::reml::{FitResult, ModelSpec};
use crate::terms::GroupIndex;

pub const MODEL_FORMAT: &str = "samm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnBindings {
    pub response: String,
    pub coord_x: String,
    pub coord_y: String,
    /// Fixed-effect columns in `X` order; synthetic names are fine for
    /// in-process fits.
    pub x_cols: Vec<String>,
    /// Which X columns carry SVC terms.
    pub svc_cols: Vec<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub fit: FitResult,
    pub columns: ColumnBindings,
    /// Spatial basis; absent for models with no spatial term.
    pub knots: Option<KnotSet>,
    pub eigen: Option<KnotEigen>,
    pub scaling_mode: ScalingMode,
    pub range_source: Option<RangeSource>,
    pub group_index: Option<GroupIndex>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| SammError::ModelFile(format!("serialization failed: {e}")))
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let file = std::fs::File::open(path)?;
        let mut model: ModelFile =
            serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| {
                SammError::ModelFile(format!("not a readable model file: {e}"))
            })?;
        if model.format != MODEL_FORMAT {
            return Err(SammError::ModelFile(format!(
                "format '{}' is not '{MODEL_FORMAT}'",
                model.format
            )));
        }
        if model.version != MODEL_VERSION {
            return Err(SammError::ModelFile(format!(
                "model file version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if let Some(idx) = model.group_index.as_mut() {
            idx.rebuild_lookup();
        }
        Ok(model)
    }

    /// Rebuilds the basis factory for prediction. `None` when the model has
    /// no spatial term.
    pub fn factory(&self) -> Result<Option<BasisFactory>> {
        match (&self.knots, &self.eigen) {
            (Some(knots), Some(eigen)) => Ok(Some(BasisFactory::new(
                knots.clone(),
                eigen.clone(),
                self.fit.n,
                self.scaling_mode,
            )?)),
            (None, None) => Ok(None),
            _ => Err(SammError::ModelFile(
                "model file has knots without eigenpairs or vice versa".into(),
            )),
        }
    }
}
