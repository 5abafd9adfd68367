//! On-disk model artifact: either a single flow expert or the full mixture,
//! wrapped in a self-describing tagged JSON document.

use std::path::Path;

use amfvi::flows::FlowExpert;
use amfvi::mixture::MixtureModel;
use amfvi::{LogDensity, Matrix};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "artifact", content = "model", rename_all = "snake_case")]
pub enum SavedModel {
    Expert(FlowExpert),
    Mixture(MixtureModel),
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SavedModel> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading model {}", path.display()))?;
        let model = serde_json::from_str(&text)
            .with_context(|| format!("parsing model {}", path.display()))?;
        Ok(model)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let m = match self {
            SavedModel::Expert(e) => e.sample(n, seed)?,
            SavedModel::Mixture(m) => m.sample(n, seed)?,
        };
        Ok(m)
    }

    pub fn mixture(&self) -> Option<&MixtureModel> {
        match self {
            SavedModel::Mixture(m) => Some(m),
            SavedModel::Expert(_) => None,
        }
    }
}

impl LogDensity for SavedModel {
    fn log_density(&self, z: &Matrix) -> Vec<f64> {
        match self {
            SavedModel::Expert(e) => e.log_density(z),
            SavedModel::Mixture(m) => m.log_density(z),
        }
    }

    fn dim(&self) -> usize {
        match self {
            SavedModel::Expert(e) => e.dim(),
            SavedModel::Mixture(m) => m.dim(),
        }
    }
}
