//! `models.json`: trained encoders as nested row lists.

use anyhow::{Context, Result};
use decssl::objectives::LinearEncoder;
use decssl::Matrix;
use serde::{Deserialize, Serialize};

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub weight: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub models: Vec<SavedModel>,
    /// Cluster of each source, for clustered runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
}

fn rows(m: &Matrix<f64>) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn matrix(r: &Rows) -> Result<Matrix<f64>> {
    Ok(Matrix::from_rows(r)?)
}

impl SavedModel {
    pub fn from_encoder(enc: &LinearEncoder<f64>) -> Self {
        SavedModel {
            weight: rows(enc.weight()),
            predictor: enc.predictor().map(rows),
            head: enc.head().map(rows),
        }
    }

    pub fn to_encoder(&self) -> Result<LinearEncoder<f64>> {
        let mut enc = LinearEncoder::new(matrix(&self.weight)?)?;
        if let Some(g) = &self.predictor {
            enc = enc.with_predictor(matrix(g)?)?;
        }
        if let Some(h) = &self.head {
            enc = enc.with_head(matrix(h)?)?;
        }
        Ok(enc)
    }
}

impl ModelFile {
    pub fn from_models(models: &[LinearEncoder<f64>], assignments: Option<Vec<usize>>) -> Self {
        ModelFile {
            models: models.iter().map(SavedModel::from_encoder).collect(),
            assignments,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn encoders(&self) -> Result<Vec<LinearEncoder<f64>>> {
        self.models.iter().map(SavedModel::to_encoder).collect()
    }
}
