//! Soft labels for cache exemplars.
//!
//! The raw label of exemplar `c` for attribute `a` is the cosine between the
//! exemplar's image embedding and the attribute's text embedding. Raw cosines
//! across modalities cluster in a narrow band, so they are standardized with
//! the mean `mu` and population standard deviation `sigma` of the whole
//! `|cache| x |A|` matrix and pushed through a row-wise softmax:
//!
//! ```text
//! soft[c][a] = softmax_a((raw[c][a] - mu) / sigma)
//! ```
//!
//! The final label mixes this with the exemplar's one-hot source attribute:
//! `(1 - alpha) * one_hot + alpha * soft`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::container::{self, ContainerKind, RawContainer};
use crate::embedding::{dot, ensure_dim, l2_normalize, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::matrix::{softmax_in_place, Matrix};

/// Below this, `sigma` is treated as zero.
pub const MIN_SIGMA: f64 = 1e-9;

/// How raw cosines are turned into soft labels before blending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftLabelMode {
    RawSoft,
    SoftmaxOnly,
    #[default]
    Standardized,
    /// Distribution sharpening; not available.
    Sharpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    OneHot,
    RawSoft,
    SoftmaxOnly,
    StandardizedSoftmax,
    Blended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub values: Matrix,
    pub variant: LabelVariant,
    pub alpha: f64,
    pub stats: Option<CacheStats>,
}

/// `|cache| x |A|` cosines between exemplars and attribute text embeddings.
pub fn raw_soft_labels(cache: &Cache, attr_text: &EmbeddingMatrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(cache.len(), attr_text.len());
    for (c, entry) in cache.entries.iter().enumerate() {
        ensure_dim(entry.embedding.len(), attr_text.dim())?;
        for a in 0..attr_text.len() {
            out.set(c, a, dot(&entry.embedding, attr_text.row(a)).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Mean and population standard deviation over every entry.
pub fn cache_statistics(raw: &Matrix) -> Result<CacheStats> {
    let values = raw.as_slice();
    if values.is_empty() {
        return Err(Error::EmptyCache);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < MIN_SIGMA {
        return Err(Error::DegenerateStatistics(sigma));
    }
    Ok(CacheStats { mu, sigma })
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Row-wise softmax of `(raw - mu) / sigma` for given statistics.
pub fn standardized_softmax(raw: &Matrix, stats: CacheStats) -> Matrix {
    softmax_rows(&raw.map(|v| (v - stats.mu) / stats.sigma))
}

pub fn normalize_soft_labels(raw: &Matrix, mode: SoftLabelMode) -> Result<Matrix> {
    match mode {
        SoftLabelMode::RawSoft => Ok(raw.clone()),
        SoftLabelMode::SoftmaxOnly => Ok(softmax_rows(raw)),
        SoftLabelMode::Standardized => Ok(standardized_softmax(raw, cache_statistics(raw)?)),
        SoftLabelMode::Sharpen => Err(Error::NotImplemented("sharpened soft labels")),
    }
}

/// One-hot rows over `num_attributes` from each entry's source attribute.
pub fn one_hot_labels(cache: &Cache, num_attributes: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(cache.len(), num_attributes);
    for (c, e) in cache.entries.iter().enumerate() {
        let a = e.source_attribute.ok_or(Error::MissingHardLabels)?;
        if a >= num_attributes {
            return Err(Error::ShapeMismatch(format!("attribute index {a} >= {num_attributes}")));
        }
        out.set(c, a, 1.0);
    }
    Ok(out)
}

/// `(1 - alpha) * one_hot + alpha * soft`, elementwise.
pub fn blend_labels(one_hot: &Matrix, soft: &Matrix, alpha: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    one_hot.ensure_same_shape(soft)?;
    let values = one_hot
        .as_slice()
        .iter()
        .zip(soft.as_slice())
        .map(|(h, s)| (1.0 - alpha) * h + alpha * s)
        .collect();
    Matrix::from_vec(one_hot.rows(), one_hot.cols(), values)
}

/// Full labeling pass: raw cosines, normalization, and blending. Caches
/// without hard labels are labeled with `alpha = 1`.
pub fn label_cache(cache: &Cache, attr_text: &EmbeddingMatrix, mode: SoftLabelMode, alpha: f64) -> Result<LabelMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let raw = raw_soft_labels(cache, attr_text)?;
    let stats = cache_statistics(&raw).ok();
    let soft = normalize_soft_labels(&raw, mode)?;
    let (one_hot, alpha) = if cache.has_hard_labels() {
        (one_hot_labels(cache, attr_text.len())?, alpha)
    } else {
        if alpha != 1.0 {
            log::warn!("cache has no hard labels; using alpha = 1 instead of {alpha}");
        }
        (Matrix::zeros(raw.rows(), raw.cols()), 1.0)
    };
    Ok(LabelMatrix {
        values: blend_labels(&one_hot, &soft, alpha)?,
        variant: LabelVariant::Blended,
        alpha,
        stats,
    })
}

/// Averages a set of prompt embeddings for one attribute and re-normalizes.
pub fn average_prompt_embedding(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::ZeroVector)?;
    let mut acc = vec![0.0; first.len()];
    for r in rows {
        ensure_dim(first.len(), r.len())?;
        acc.iter_mut().zip(r.iter()).for_each(|(a, v)| *a += v);
    }
    l2_normalize(&acc)
}

#[derive(Serialize, Deserialize)]
struct LabelSidecar {
    variant: LabelVariant,
    alpha: f64,
    mu: Option<f64>,
    sigma: Option<f64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

impl LabelMatrix {
    /// Writes the values as a `labels` container, one row per cache entry,
    /// plus a `.meta.json` sidecar with variant and statistics.
    pub fn save(&self, path: &Path, cache: &Cache) -> Result<()> {
        let raw = RawContainer {
            kind: ContainerKind::Labels,
            dim: self.values.cols(),
            ids: cache
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| format!("{i}:{}", e.image_id))
                .collect(),
            values: self.values.as_slice().iter().map(|&v| v as f32).collect(),
        };
        container::write(path, &raw)?;
        let meta = LabelSidecar {
            variant: self.variant,
            alpha: self.alpha,
            mu: self.stats.map(|s| s.mu),
            sigma: self.stats.map(|s| s.sigma),
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&side, e))?;
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
    }
}
