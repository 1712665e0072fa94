//! Trained model on disk: parameters, the variant they were trained for and
//! the training-set action prior, as JSON.

use super::HarnessError;
use crate::eval::ActionPrior;
use crate::sap::{AblationVariant, SapConfig, SapParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub variant: AblationVariant,
    pub sap_config: SapConfig,
    pub params: SapParams,
    pub prior: ActionPrior,
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string(model).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn load_model(path: &Path) -> Result<ModelFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let mut model: ModelFile = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    model.params.validate()?;
    Ok(model)
}
