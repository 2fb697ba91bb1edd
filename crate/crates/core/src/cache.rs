//! Cache construction: sample objects per attribute, retrieve exemplars.
//!
//! With the `comca` strategy each attribute `a` draws `K` objects from its
//! normalized compatibility row, forms the query `A photo of {o} that is {a}`
//! for each draw, and retrieves the nearest pool image to the precomputed
//! query embedding (id `"{a}|{o}"`). An image is used at most once per
//! attribute but may be shared across attributes.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compat::{normalize_distribution, AttributeDistribution, CompatibilityTable};
use crate::embedding::{dot, ensure_dim, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::prompts::{build_query, RETRIEVAL_TEMPLATE};
use crate::rng::sample_objects;
use crate::vocab::{pair_id, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStrategy {
    #[default]
    Comca,
    Random,
    BruteForce,
    ImageBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub image_id: String,
    pub embedding: Vec<f64>,
    /// Attribute the image was retrieved for; `None` for image-based caches.
    pub source_attribute: Option<usize>,
    pub sampled_object: Option<usize>,
    pub query_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    pub entries: Vec<CacheEntry>,
    pub shots_per_attribute: usize,
    pub seed: u64,
    pub strategy: CacheStrategy,
}

impl Cache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.len())
    }

    /// True when every entry carries a source attribute.
    pub fn has_hard_labels(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.source_attribute.is_some())
    }

    /// Checks the per-attribute shot count and the no-repeat rule.
    pub fn validate(&self, num_attributes: usize, num_objects: usize) -> Result<()> {
        if self.strategy == CacheStrategy::ImageBased {
            return Ok(());
        }
        let per_attr = match self.strategy {
            CacheStrategy::BruteForce => num_objects * self.shots_per_attribute,
            _ => self.shots_per_attribute,
        };
        let mut counts = vec![0usize; num_attributes];
        let mut seen: Vec<HashSet<&str>> = vec![HashSet::new(); num_attributes];
        for e in &self.entries {
            let a = e
                .source_attribute
                .filter(|&a| a < num_attributes)
                .ok_or_else(|| Error::Format(format!("entry {:?} has no valid attribute", e.image_id)))?;
            if e.sampled_object.is_some_and(|o| o >= num_objects) {
                return Err(Error::Format(format!("entry {:?} has an invalid object", e.image_id)));
            }
            counts[a] += 1;
            if !seen[a].insert(&e.image_id) {
                return Err(Error::Format(format!(
                    "image {:?} repeated within attribute {a}",
                    e.image_id
                )));
            }
        }
        if let Some(a) = counts.iter().position(|&c| c != per_attr) {
            return Err(Error::Format(format!(
                "attribute {a} has {} entries, expected {per_attr}",
                counts[a]
            )));
        }
        Ok(())
    }
}

/// Index of the pool row most similar to `query` among rows not excluded.
/// Ties go to the lexicographically smallest id.
pub fn retrieve_index(query: &[f64], pool: &EmbeddingMatrix, exclude: &HashSet<&str>) -> Result<usize> {
    ensure_dim(query.len(), pool.dim())?;
    let mut best: Option<(usize, f64)> = None;
    for (i, id) in pool.ids().iter().enumerate() {
        if exclude.contains(id.as_str()) {
            continue;
        }
        let s = dot(query, pool.row(i));
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && id < &pool.ids()[b]),
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::PoolExhausted)
}

/// Id of the nearest non-excluded pool image.
pub fn retrieve_for_query<'p>(query: &[f64], pool: &'p EmbeddingMatrix, exclude: &HashSet<&str>) -> Result<&'p str> {
    retrieve_index(query, pool, exclude).map(|i| pool.ids()[i].as_str())
}

/// The `k` nearest distinct pool rows, best first, same tie rule.
pub fn retrieve_top_k(query: &[f64], pool: &EmbeddingMatrix, k: usize) -> Result<Vec<usize>> {
    ensure_dim(query.len(), pool.dim())?;
    if k > pool.len() {
        return Err(Error::PoolExhausted);
    }
    let mut order: Vec<(usize, f64)> = (0..pool.len()).map(|i| (i, dot(query, pool.row(i)))).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| pool.ids()[a.0].cmp(&pool.ids()[b.0])));
    Ok(order.into_iter().take(k).map(|(i, _)| i).collect())
}

pub struct CacheInputs<'a> {
    pub vocab: &'a Vocabulary,
    pub compat: Option<&'a CompatibilityTable>,
    pub queries: &'a EmbeddingMatrix,
    pub pool: &'a EmbeddingMatrix,
    pub retrieval_template: &'a str,
}

impl<'a> CacheInputs<'a> {
    pub fn new(vocab: &'a Vocabulary, queries: &'a EmbeddingMatrix, pool: &'a EmbeddingMatrix) -> Self {
        CacheInputs {
            vocab,
            compat: None,
            queries,
            pool,
            retrieval_template: RETRIEVAL_TEMPLATE,
        }
    }

    pub fn with_compat(mut self, compat: &'a CompatibilityTable) -> Self {
        self.compat = Some(compat);
        self
    }

    fn distribution(&self, attribute: usize, strategy: CacheStrategy) -> Result<AttributeDistribution> {
        let m = self.vocab.objects().len();
        match strategy {
            CacheStrategy::Random => Ok(AttributeDistribution {
                attribute: self.vocab.attributes()[attribute].name.clone(),
                probs: vec![1.0 / m as f64; m],
            }),
            _ => {
                let compat = self
                    .compat
                    .ok_or_else(|| Error::Config("the comca strategy needs a compatibility table".into()))?;
                let name = &self.vocab.attributes()[attribute].name;
                let row = compat
                    .attribute_index(name)
                    .ok_or_else(|| Error::Config(format!("attribute {name:?} missing from compatibility table")))?;
                let mut d = normalize_distribution(compat.phi.row(row))?;
                d.attribute = name.clone();
                Ok(d)
            }
        }
    }

    fn check_compat_objects(&self) -> Result<()> {
        if let Some(c) = self.compat {
            if c.objects != self.vocab.objects() {
                return Err(Error::Config(
                    "compatibility table objects differ from the vocabulary".into(),
                ));
            }
        }
        Ok(())
    }

    /// Retrieves one exemplar per object index for attribute `a`, skipping
    /// images already used for `a`.
    fn retrieve_shots(&self, a: usize, objects: &[usize]) -> Result<Vec<CacheEntry>> {
        let attr = &self.vocab.attributes()[a];
        let mut used: HashSet<&str> = HashSet::new();
        let mut out = Vec::with_capacity(objects.len());
        for &o in objects {
            let obj = &self.vocab.objects()[o];
            let qid = pair_id(&attr.name, obj);
            let query = self
                .queries
                .get(&qid)
                .ok_or_else(|| Error::MissingQueryEmbedding(qid.clone()))?;
            let row = retrieve_index(query, self.pool, &used)?;
            let id = self.pool.ids()[row].as_str();
            used.insert(id);
            out.push(CacheEntry {
                image_id: id.to_string(),
                embedding: self.pool.row(row).to_vec(),
                source_attribute: Some(a),
                sampled_object: Some(o),
                query_text: Some(build_query(attr, obj, self.retrieval_template)?),
            });
        }
        Ok(out)
    }
}

/// Builds the cache for `strategy`. `image_based` returns an empty cache:
/// those caches are assembled per test image by [`image_based_cache`].
pub fn build_cache(inputs: &CacheInputs<'_>, k: usize, seed: u64, strategy: CacheStrategy) -> Result<Cache> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    ensure_dim(inputs.queries.dim(), inputs.pool.dim())?;
    inputs.check_compat_objects()?;
    let num_attrs = inputs.vocab.attributes().len();
    let num_objs = inputs.vocab.objects().len();
    let per_attribute: Vec<Vec<CacheEntry>> = match strategy {
        CacheStrategy::ImageBased => Vec::new(),
        CacheStrategy::Comca | CacheStrategy::Random => (0..num_attrs)
            .into_par_iter()
            .map(|a| {
                let dist = inputs.distribution(a, strategy)?;
                let objects = sample_objects(&dist, k, seed, a);
                inputs.retrieve_shots(a, &objects)
            })
            .collect::<Result<_>>()?,
        CacheStrategy::BruteForce => (0..num_attrs)
            .into_par_iter()
            .map(|a| {
                let objects: Vec<usize> = (0..num_objs).flat_map(|o| std::iter::repeat_n(o, k)).collect();
                inputs.retrieve_shots(a, &objects)
            })
            .collect::<Result<_>>()?,
    };
    let cache = Cache {
        entries: per_attribute.into_iter().flatten().collect(),
        shots_per_attribute: k,
        seed,
        strategy,
    };
    cache.validate(num_attrs, num_objs)?;
    Ok(cache)
}

/// The `k` pool images nearest to one test image, without hard labels.
pub fn image_based_cache(test_image: &[f64], pool: &EmbeddingMatrix, k: usize) -> Result<Cache> {
    let rows = retrieve_top_k(test_image, pool, k)?;
    Ok(Cache {
        entries: rows
            .into_iter()
            .map(|r| CacheEntry {
                image_id: pool.ids()[r].clone(),
                embedding: pool.row(r).to_vec(),
                source_attribute: None,
                sampled_object: None,
                query_text: None,
            })
            .collect(),
        shots_per_attribute: k,
        seed: 0,
        strategy: CacheStrategy::ImageBased,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub attribute: Option<String>,
    pub object: Option<String>,
    pub query: Option<String>,
}

/// On-disk form of a cache; embeddings are referenced by pool id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub k: usize,
    pub seed: u64,
    pub strategy: CacheStrategy,
    pub entries: Vec<ManifestEntry>,
}

impl CacheManifest {
    pub fn from_cache(cache: &Cache, vocab: &Vocabulary) -> Self {
        CacheManifest {
            k: cache.shots_per_attribute,
            seed: cache.seed,
            strategy: cache.strategy,
            entries: cache
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    image_id: e.image_id.clone(),
                    attribute: e.source_attribute.map(|a| vocab.attributes()[a].name.clone()),
                    object: e.sampled_object.map(|o| vocab.objects()[o].clone()),
                    query: e.query_text.clone(),
                })
                .collect(),
        }
    }

    /// Resolves names against `vocab` and embeddings against `pool`.
    pub fn resolve(&self, vocab: &Vocabulary, pool: &EmbeddingMatrix) -> Result<Cache> {
        let entries = self
            .entries
            .iter()
            .map(|m| {
                let embedding = pool
                    .get(&m.image_id)
                    .ok_or_else(|| Error::Format(format!("cache image {:?} not in pool", m.image_id)))?
                    .to_vec();
                let source_attribute = m
                    .attribute
                    .as_deref()
                    .map(|a| vocab.attribute_index(a).ok_or_else(|| Error::Format(format!("unknown attribute {a:?}"))))
                    .transpose()?;
                let sampled_object = m
                    .object
                    .as_deref()
                    .map(|o| vocab.object_index(o).ok_or_else(|| Error::Format(format!("unknown object {o:?}"))))
                    .transpose()?;
                Ok(CacheEntry {
                    image_id: m.image_id.clone(),
                    embedding,
                    source_attribute,
                    sampled_object,
                    query_text: m.query.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = Cache {
            entries,
            shots_per_attribute: self.k,
            seed: self.seed,
            strategy: self.strategy,
        };
        cache.validate(vocab.attributes().len(), vocab.objects().len())?;
        Ok(cache)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
