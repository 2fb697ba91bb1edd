//! Attribute scores: zero-shot, cache-based, fused, and the baselines.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{image_based_cache, Cache};
use crate::compat::CountMatrix;
use crate::embedding::{dot, ensure_dim, similarity_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::labels::{label_cache, LabelMatrix, SoftLabelMode};
use crate::matrix::{softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    ZeroShot,
    CacheTip,
    CacheComca,
    Fused,
    Iap,
    ImageBased,
}

/// Which exponential maps a cache similarity to an affinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaForm {
    /// `exp(-beta * (1 - z))`
    #[default]
    Tip,
    /// `exp(1 + beta * z)`, larger than `Tip` by a factor `e^2` at `beta = 1`.
    Paper,
}

impl EtaForm {
    pub fn apply(self, z: f64, beta: f64) -> f64 {
        match self {
            EtaForm::Tip => (-beta * (1.0 - z)).exp(),
            EtaForm::Paper => (1.0 + beta * z).exp(),
        }
    }
}

/// Where the soft label enters the cache sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPlacement {
    /// `eta(label * cos)`
    #[default]
    Outside,
    /// `label * eta(cos)`
    Inside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    MinMax,
    #[default]
    MaxSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub k: usize,
    pub norm_mode: NormMode,
    pub eta_c: EtaForm,
    #[serde(rename = "eq10_form")]
    pub label_placement: LabelPlacement,
    pub soft_labels: SoftLabelMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 1.17,
            beta: 1.0,
            alpha: 0.6,
            k: 16,
            norm_mode: NormMode::MaxSoftmax,
            eta_c: EtaForm::Tip,
            label_placement: LabelPlacement::Outside,
            soft_labels: SoftLabelMode::Standardized,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Instances x attributes predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub instance_ids: Vec<String>,
    pub attribute_names: Vec<String>,
    pub values: Matrix,
    pub kind: ScoreKind,
}

impl ScoreMatrix {
    pub fn new(instance_ids: Vec<String>, attribute_names: Vec<String>, values: Matrix, kind: ScoreKind) -> Result<Self> {
        if values.shape() != (instance_ids.len(), attribute_names.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} values for {} instances x {} attributes",
                values.shape(),
                instance_ids.len(),
                attribute_names.len()
            )));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite score {v}")));
        }
        Ok(ScoreMatrix {
            instance_ids,
            attribute_names,
            values,
            kind,
        })
    }

    fn like(&self, values: Matrix, kind: ScoreKind) -> Result<Self> {
        Self::new(self.instance_ids.clone(), self.attribute_names.clone(), values, kind)
    }

    fn ensure_aligned(&self, other: &ScoreMatrix) -> Result<()> {
        if self.instance_ids != other.instance_ids || self.attribute_names != other.attribute_names {
            return Err(Error::ShapeMismatch("score matrices disagree on instances or attributes".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreHeader {
    instances: Vec<String>,
    attributes: Vec<String>,
    kind: ScoreKind,
}

/// Companion file holding the `f64` block of a score matrix.
pub fn score_values_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl ScoreMatrix {
    /// Writes the JSON header to `path` and the little-endian `f64` values,
    /// row-major, to `path` + `.bin`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ScoreHeader {
            instances: self.instance_ids.clone(),
            attributes: self.attribute_names.clone(),
            kind: self.kind,
        };
        let text = serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
        let bin = score_values_path(path);
        let bytes: Vec<u8> = self.values.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bytes).map_err(|e| Error::io(bin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: ScoreHeader = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let bin = score_values_path(path);
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let (n, m) = (header.instances.len(), header.attributes.len());
        if bytes.len() != n * m * 8 {
            return Err(Error::Format(format!(
                "{} holds {} bytes, expected {} for {n}x{m}",
                bin.display(),
                bytes.len(),
                n * m * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.instances, header.attributes, Matrix::from_vec(n, m, values)?, header.kind)
    }
}

/// `exp(-beta * (1 - z))`.
pub fn eta_c(z: f64, beta: f64) -> f64 {
    EtaForm::Tip.apply(z, beta)
}

/// Cosine between every test image and every attribute prompt.
pub fn zero_shot_scores(images: &EmbeddingMatrix, attr_prompts: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    let values = similarity_matrix(images, attr_prompts)?;
    ScoreMatrix::new(images.ids().to_vec(), attr_prompts.ids().to_vec(), values, ScoreKind::ZeroShot)
}

fn check_cache_dim(images: &EmbeddingMatrix, cache: &Cache) -> Result<()> {
    match cache.dim() {
        Some(d) => ensure_dim(images.dim(), d),
        None => Err(Error::EmptyCache),
    }
}

/// Per attribute, the sum of affinities to the exemplars retrieved for it.
pub fn tip_cache_scores(
    images: &EmbeddingMatrix,
    cache: &Cache,
    attributes: &[String],
    beta: f64,
    eta: EtaForm,
) -> Result<ScoreMatrix> {
    check_cache_dim(images, cache)?;
    if !cache.has_hard_labels() {
        return Err(Error::MissingHardLabels);
    }
    let n_attr = attributes.len();
    let rows: Vec<Vec<f64>> = (0..images.len())
        .into_par_iter()
        .map(|x| {
            let img = images.row(x);
            let mut row = vec![0.0; n_attr];
            for e in &cache.entries {
                let a = e.source_attribute.expect("checked above");
                row[a] += eta.apply(dot(img, &e.embedding).clamp(-1.0, 1.0), beta);
            }
            row
        })
        .collect();
    images_by_attributes(images, attributes, rows, ScoreKind::CacheTip)
}

fn images_by_attributes(images: &EmbeddingMatrix, attributes: &[String], rows: Vec<Vec<f64>>, kind: ScoreKind) -> Result<ScoreMatrix> {
    let values = if rows.is_empty() {
        Matrix::zeros(0, attributes.len())
    } else {
        Matrix::from_rows(&rows)?
    };
    ScoreMatrix::new(images.ids().to_vec(), attributes.to_vec(), values, kind)
}

/// One instance's cache scores against every exemplar, with labels.
fn comca_row(img: &[f64], cache: &Cache, labels: &Matrix, beta: f64, eta: EtaForm, form: LabelPlacement) -> Vec<f64> {
    let mut row = vec![0.0; labels.cols()];
    for (c, e) in cache.entries.iter().enumerate() {
        let cos = dot(img, &e.embedding).clamp(-1.0, 1.0);
        let label = labels.row(c);
        match form {
            LabelPlacement::Outside => {
                for (r, l) in row.iter_mut().zip(label) {
                    *r += eta.apply(l * cos, beta);
                }
            }
            LabelPlacement::Inside => {
                let affinity = eta.apply(cos, beta);
                for (r, l) in row.iter_mut().zip(label) {
                    *r += l * affinity;
                }
            }
        }
    }
    row
}

/// Every exemplar contributes to every attribute through its label.
pub fn comca_cache_scores(
    images: &EmbeddingMatrix,
    cache: &Cache,
    labels: &LabelMatrix,
    attributes: &[String],
    beta: f64,
    eta: EtaForm,
    form: LabelPlacement,
) -> Result<ScoreMatrix> {
    check_cache_dim(images, cache)?;
    if labels.values.shape() != (cache.len(), attributes.len()) {
        return Err(Error::ShapeMismatch(format!(
            "labels {:?} for a cache of {} and {} attributes",
            labels.values.shape(),
            cache.len(),
            attributes.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..images.len())
        .into_par_iter()
        .map(|x| comca_row(images.row(x), cache, &labels.values, beta, eta, form))
        .collect();
    images_by_attributes(images, attributes, rows, ScoreKind::CacheComca)
}

/// Final normalization of one fused row, in place.
pub fn normalize_row(z: &mut [f64], mode: NormMode) {
    match mode {
        NormMode::None => {}
        NormMode::MinMax => {
            let min = z.iter().copied().fold(f64::INFINITY, f64::min);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            for v in z.iter_mut() {
                *v = if span > 0.0 { (*v - min) / span } else { 0.0 };
            }
        }
        NormMode::MaxSoftmax => {
            let mut max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= 1e-12 {
                let shift = 1e-6 - max;
                z.iter_mut().for_each(|v| *v += shift);
                max = 1e-6;
            }
            z.iter_mut().for_each(|v| *v /= max);
            softmax_in_place(z);
        }
    }
}

/// `normalize(lambda * cache + clip)` per row.
pub fn fuse_final(cache_scores: &ScoreMatrix, clip_scores: &ScoreMatrix, lambda: f64, mode: NormMode) -> Result<ScoreMatrix> {
    cache_scores.ensure_aligned(clip_scores)?;
    let mut out = Matrix::zeros(clip_scores.values.rows(), clip_scores.values.cols());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (o, (c, z)) in row
            .iter_mut()
            .zip(cache_scores.values.row(r).iter().zip(clip_scores.values.row(r)))
        {
            *o = lambda * c + z;
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateRow(r));
        }
        normalize_row(row, mode);
    }
    clip_scores.like(out, ScoreKind::Fused)
}

/// `p(a | x) = sum_o p(a | o) p(o | x)`.
pub fn iap_scores(object_scores: &ScoreMatrix, attr_given_object: &Matrix, attributes: &[String]) -> Result<ScoreMatrix> {
    let (n_obj, n_attr) = attr_given_object.shape();
    if object_scores.values.cols() != n_obj || attributes.len() != n_attr {
        return Err(Error::ShapeMismatch(format!(
            "object scores {:?}, p(a|o) {:?}, {} attributes",
            object_scores.values.shape(),
            attr_given_object.shape(),
            attributes.len()
        )));
    }
    check_stochastic(&object_scores.values)?;
    check_stochastic(attr_given_object)?;
    let mut out = Matrix::zeros(object_scores.values.rows(), n_attr);
    for x in 0..out.rows() {
        let p_obj = object_scores.values.row(x);
        for a in 0..n_attr {
            let s = (0..n_obj).map(|o| attr_given_object.get(o, a) * p_obj[o]).sum();
            out.set(x, a, s);
        }
    }
    ScoreMatrix::new(object_scores.instance_ids.clone(), attributes.to_vec(), out, ScoreKind::Iap)
}

fn check_stochastic(m: &Matrix) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || r.iter().any(|v| *v < 0.0) {
            return Err(Error::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// `|O| x |A|` matrix of `p(a | o)` from co-occurrence counts. Objects with
/// no counts get a uniform row.
pub fn attr_given_object(counts: &CountMatrix) -> Matrix {
    let (n_attr, n_obj) = counts.shape();
    let mut out = Matrix::zeros(n_obj, n_attr);
    for o in 0..n_obj {
        let total: u64 = (0..n_attr).map(|a| counts.get(a, o)).sum();
        for a in 0..n_attr {
            let p = if total == 0 {
                1.0 / n_attr as f64
            } else {
                counts.get(a, o) as f64 / total as f64
            };
            out.set(o, a, p);
        }
    }
    out
}

/// Row-wise softmax of `max`-scaled scores, turning object logits into
/// `p(o | x)` for [`iap_scores`].
pub fn to_distribution(scores: &ScoreMatrix) -> Result<ScoreMatrix> {
    let mut values = scores.values.clone();
    for r in 0..values.rows() {
        normalize_row(values.row_mut(r), NormMode::MaxSoftmax);
    }
    scores.like(values, scores.kind)
}

/// Per-instance cache of the `k` nearest pool images, soft-labeled with
/// `alpha = 1`, scored and fused with the instance's zero-shot row.
pub fn image_based_scores(
    test_image: &[f64],
    clip_row: &[f64],
    pool: &EmbeddingMatrix,
    attr_text: &EmbeddingMatrix,
    params: &HyperParams,
) -> Result<Vec<f64>> {
    if clip_row.len() != attr_text.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} zero-shot scores for {} attributes",
            clip_row.len(),
            attr_text.len()
        )));
    }
    let cache = image_based_cache(test_image, pool, params.k)?;
    let labels = image_based_labels(&cache, attr_text, params.soft_labels)?;
    let cache_row = comca_row(test_image, &cache, &labels.values, params.beta, params.eta_c, params.label_placement);
    let mut z: Vec<f64> = cache_row
        .iter()
        .zip(clip_row)
        .map(|(c, s)| params.lambda * c + s)
        .collect();
    normalize_row(&mut z, params.norm_mode);
    Ok(z)
}

/// Soft labels for a cache without hard labels. A single exemplar has no
/// spread to standardize against, so its row falls back to a plain softmax.
fn image_based_labels(cache: &Cache, attr_text: &EmbeddingMatrix, mode: SoftLabelMode) -> Result<LabelMatrix> {
    match label_cache(cache, attr_text, mode, 1.0) {
        Err(Error::DegenerateStatistics(_)) if mode == SoftLabelMode::Standardized => {
            label_cache(cache, attr_text, SoftLabelMode::SoftmaxOnly, 1.0)
        }
        other => other,
    }
}

/// [`image_based_scores`] for every test image.
pub fn image_based_batch(
    images: &EmbeddingMatrix,
    attr_prompts: &EmbeddingMatrix,
    pool: &EmbeddingMatrix,
    attr_text: &EmbeddingMatrix,
    params: &HyperParams,
) -> Result<ScoreMatrix> {
    let clip = zero_shot_scores(images, attr_prompts)?;
    let rows: Vec<Vec<f64>> = (0..images.len())
        .into_par_iter()
        .map(|x| image_based_scores(images.row(x), clip.values.row(x), pool, attr_text, params))
        .collect::<Result<_>>()?;
    images_by_attributes(images, attr_prompts.ids(), rows, ScoreKind::ImageBased)
}
