//! Attribute–object compatibility.
//!
//! Two estimates are combined: co-occurrence counts mined from a caption
//! corpus ([`corpus`]) and 0–10 plausibility scores returned by an LLM
//! ([`llm`]). The fused score row of an attribute, normalized to sum to one,
//! is the distribution its cache shots draw objects from.

pub mod corpus;
pub mod llm;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use corpus::{count_cooccurrences, CooccurrenceCounts, CountMatrix, MatchConfig, Smoothing};
pub use llm::{llm_score_pairs, ChatClient, HttpChatClient, LlmConfig, LlmScores, ScoreCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    #[default]
    Multiply,
    Sum,
    LlmOnly,
    DbOnly,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityTable {
    pub attributes: Vec<String>,
    pub objects: Vec<String>,
    pub phi_db: CountMatrix,
    pub phi_llm: Matrix,
    pub phi: Matrix,
    pub combine_mode: CombineMode,
}

impl CompatibilityTable {
    /// Fuses the two estimates and checks every table invariant.
    pub fn new(
        attributes: Vec<String>,
        objects: Vec<String>,
        phi_db: CountMatrix,
        phi_llm: Matrix,
        combine_mode: CombineMode,
    ) -> Result<Self> {
        let phi = fuse_scores(&phi_db, &phi_llm, combine_mode)?;
        let table = CompatibilityTable {
            attributes,
            objects,
            phi_db,
            phi_llm,
            phi,
            combine_mode,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = (self.attributes.len(), self.objects.len());
        for (what, s) in [
            ("phi_db", self.phi_db.shape()),
            ("phi_llm", self.phi_llm.shape()),
            ("phi", self.phi.shape()),
        ] {
            if s != shape {
                return Err(Error::ShapeMismatch(format!("{what} is {s:?}, expected {shape:?}")));
            }
        }
        if let Some(v) = self
            .phi_llm
            .as_slice()
            .iter()
            .find(|v| !(0.0..=10.0).contains(*v))
        {
            return Err(Error::Format(format!("phi_llm value {v} outside [0, 10]")));
        }
        if let Some(v) = self.phi.as_slice().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::NegativeScore(*v));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    /// Normalized sampling distribution for one attribute row.
    pub fn distribution(&self, attribute: usize) -> Result<AttributeDistribution> {
        let mut d = normalize_distribution(self.phi.row(attribute))?;
        d.attribute = self.attributes[attribute].clone();
        Ok(d)
    }

    /// The `n` highest-scoring objects for an attribute, best first.
    pub fn top_objects(&self, attribute: usize, n: usize) -> Vec<(&str, f64)> {
        let row = self.phi.row(attribute);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(n)
            .map(|o| (self.objects[o].as_str(), row[o]))
            .collect()
    }
}

/// Combines count and LLM estimates elementwise.
pub fn fuse_scores(phi_db: &CountMatrix, phi_llm: &Matrix, mode: CombineMode) -> Result<Matrix> {
    if phi_db.shape() != phi_llm.shape() {
        return Err(Error::ShapeMismatch(format!(
            "phi_db {:?} vs phi_llm {:?}",
            phi_db.shape(),
            phi_llm.shape()
        )));
    }
    let (rows, cols) = phi_llm.shape();
    let db = phi_db.as_slice().iter().map(|&c| c as f64);
    let llm = phi_llm.as_slice().iter().copied();
    let values: Vec<f64> = match mode {
        CombineMode::Multiply => db.zip(llm).map(|(d, l)| d * l).collect(),
        CombineMode::Sum => db.zip(llm).map(|(d, l)| d + l).collect(),
        CombineMode::LlmOnly => llm.collect(),
        CombineMode::DbOnly => db.collect(),
        CombineMode::Uniform => vec![1.0; rows * cols],
    };
    Matrix::from_vec(rows, cols, values)
}

/// A categorical distribution over the object list for one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDistribution {
    pub attribute: String,
    pub probs: Vec<f64>,
}

/// Scales a non-negative score row to sum to one. An all-zero row falls
/// back to the uniform distribution.
pub fn normalize_distribution(row: &[f64]) -> Result<AttributeDistribution> {
    if let Some(&v) = row.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeScore(v));
    }
    if row.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let total: f64 = row.iter().sum();
    let probs = if total > 0.0 {
        row.iter().map(|v| v / total).collect()
    } else {
        log::warn!("all-zero compatibility row; falling back to uniform sampling");
        vec![1.0 / row.len() as f64; row.len()]
    };
    Ok(AttributeDistribution {
        attribute: String::new(),
        probs,
    })
}
