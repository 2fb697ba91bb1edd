//! Embedding containers and the vector kernels built on them.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::container::{self, ContainerKind, RawContainer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Rows whose norm deviates from 1 by more than this are re-normalized on ingest.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Image,
    Text,
}

impl From<EmbeddingKind> for ContainerKind {
    fn from(k: EmbeddingKind) -> Self {
        match k {
            EmbeddingKind::Image => ContainerKind::Image,
            EmbeddingKind::Text => ContainerKind::Text,
        }
    }
}

/// `n` unit-norm rows of width `dim`, each tagged with a unique id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    kind: EmbeddingKind,
    ids: Vec<String>,
    data: Matrix,
    index: HashMap<String, usize>,
}

/// What ingest had to repair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    /// Row indices that were re-normalized.
    pub renormalized: Vec<usize>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.renormalized.is_empty()
    }
}

impl EmbeddingMatrix {
    /// Validates ids and norms. Rows off unit norm are re-normalized with a
    /// warning; zero rows are rejected.
    pub fn new(kind: EmbeddingKind, ids: Vec<String>, data: Matrix) -> Result<(Self, IngestReport)> {
        if data.cols() == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        if ids.len() != data.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                data.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::Format(format!("row {i} has an empty id")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut data = data;
        let mut report = IngestReport::default();
        for r in 0..data.rows() {
            let row = data.row_mut(r);
            let norm = norm(row);
            if norm <= ZERO_NORM {
                return Err(Error::ZeroVector);
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                row.iter_mut().for_each(|v| *v /= norm);
                report.renormalized.push(r);
            }
        }
        if !report.is_clean() {
            log::warn!(
                "re-normalized {} of {} rows that were off unit norm",
                report.renormalized.len(),
                data.rows()
            );
        }
        Ok((EmbeddingMatrix { kind, ids, data, index }, report))
    }

    /// Convenience constructor that discards the ingest report.
    pub fn from_rows<R: AsRef<[f64]>>(kind: EmbeddingKind, ids: &[&str], rows: &[R]) -> Result<Self> {
        let data = Matrix::from_rows(rows)?;
        let ids = ids.iter().map(|s| s.to_string()).collect();
        Ok(Self::new(kind, ids, data)?.0)
    }

    pub fn load(path: &Path) -> Result<(Self, IngestReport)> {
        let raw = container::read(path)?;
        Self::from_container(raw)
    }

    pub fn from_container(raw: RawContainer) -> Result<(Self, IngestReport)> {
        let kind = match raw.kind {
            ContainerKind::Image => EmbeddingKind::Image,
            ContainerKind::Text => EmbeddingKind::Text,
            ContainerKind::Labels => {
                return Err(Error::Format("label container is not an embedding matrix".into()))
            }
        };
        let n = raw.rows();
        let values = raw.values.iter().map(|&v| f64::from(v)).collect();
        Self::new(kind, raw.ids, Matrix::from_vec(n, raw.dim, values)?)
    }

    pub fn to_container(&self) -> RawContainer {
        RawContainer {
            kind: self.kind.into(),
            dim: self.dim(),
            ids: self.ids.clone(),
            values: self.data.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, &self.to_container())
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let picked: Vec<&[f64]> = rows.iter().map(|&r| self.row(r)).collect();
        Ok(Self::new(self.kind, ids, Matrix::from_rows(&picked)?)?.0)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine of two unit vectors: their dot product, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(dot(u, v).clamp(-1.0, 1.0))
}

pub(crate) fn ensure_dim(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimMismatch { left, right });
    }
    Ok(())
}

/// All pairwise cosines, `rows.len() x cols.len()`. Rows are computed in
/// parallel; each entry is an independent dot product so the result does
/// not depend on the thread count.
pub fn similarity_matrix(rows: &EmbeddingMatrix, cols: &EmbeddingMatrix) -> Result<Matrix> {
    ensure_dim(rows.dim(), cols.dim())?;
    let width = cols.len();
    if width == 0 {
        return Ok(Matrix::zeros(rows.len(), 0));
    }
    let values: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let r = rows.row(i);
            (0..width).map(move |j| dot(r, cols.row(j)).clamp(-1.0, 1.0))
        })
        .collect();
    Matrix::from_vec(rows.len(), width, values)
}
