//! End-to-end runs: cache construction, labeling, scoring, fusion and
//! evaluation, with artifacts written to a run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{build_cache, retrieve_top_k, Cache, CacheEntry, CacheInputs, CacheManifest, CacheStrategy};
use crate::compat::corpus::count_file;
use crate::compat::llm::{llm_score_pairs, ChatClient, HttpChatClient, ScoreCache, API_KEY_ENV};
use crate::compat::{CombineMode, CompatibilityTable};
use crate::config::RunConfig;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate, AnnotationSet, EvalResult};
use crate::labels::{label_cache, LabelMatrix};
use crate::matrix::Matrix;
use crate::scoring::{
    attr_given_object, comca_cache_scores, fuse_final, image_based_batch, iap_scores, tip_cache_scores,
    to_distribution, zero_shot_scores, HyperParams, NormMode, ScoreMatrix,
};
use crate::vocab::Vocabulary;

/// Loads an embedding container, logging any rows that had to be
/// re-normalized.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let (m, report) = EmbeddingMatrix::load(path)?;
    if !report.is_clean() {
        log::warn!(
            "{}: re-normalized {} of {} rows",
            path.display(),
            report.renormalized.len(),
            m.len()
        );
    }
    Ok(m)
}

/// Rows of `emb` reordered to follow `names`.
pub fn align_rows(emb: &EmbeddingMatrix, names: &[String], what: &str) -> Result<EmbeddingMatrix> {
    if emb.ids() == names {
        return Ok(emb.clone());
    }
    let rows = names
        .iter()
        .map(|n| {
            emb.position(n)
                .ok_or_else(|| Error::Misalignment(format!("{what} has no row for {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    emb.select(&rows)
}

/// An HTTP client when an API key is present in the environment.
pub fn client_from_env(cfg: &RunConfig) -> Result<Option<HttpChatClient>> {
    if std::env::var_os(API_KEY_ENV).is_none() {
        return Ok(None);
    }
    HttpChatClient::new(&cfg.llm).map(Some)
}

/// Counts the corpus and, unless `db_only`, scores every pair with the LLM.
pub fn compute_compat(cfg: &RunConfig, client: Option<&dyn ChatClient>) -> Result<CompatibilityTable> {
    let vocab = Vocabulary::load(cfg.require("vocab", &cfg.paths.vocab)?)?;
    let corpus = cfg.require("corpus", &cfg.paths.corpus)?;
    let shards = if cfg.shards == 0 { rayon::current_num_threads() } else { cfg.shards };
    let counts = count_file(corpus, &vocab, cfg.matching, shards)?;
    if !counts.malformed.is_empty() {
        log::warn!("{}: skipped {} malformed records", corpus.display(), counts.malformed.len());
        for e in counts.malformed.iter().take(5) {
            log::debug!("{e}");
        }
    }
    let (phi_llm, mode) = if cfg.db_only {
        let (a, o) = counts.phi_db.shape();
        (Matrix::zeros(a, o), CombineMode::DbOnly)
    } else {
        let mut store = match &cfg.paths.llm_scores {
            Some(p) => ScoreCache::open(p)?,
            None => ScoreCache::in_memory(),
        };
        let scores = llm_score_pairs(&vocab, client, &cfg.llm, &mut store)?;
        log::info!("LLM scoring took {} requests, {} fallbacks", scores.requests, scores.fallbacks.len());
        (scores.phi_llm, cfg.combine_mode)
    };
    CompatibilityTable::new(
        vocab.attribute_names(),
        vocab.objects().to_vec(),
        counts.phi_db,
        phi_llm,
        mode,
    )
}

/// Embeddings a scoring run needs, already aligned with the vocabulary.
pub struct ScoringInputs<'a> {
    pub vocab: &'a Vocabulary,
    pub compat: Option<&'a CompatibilityTable>,
    pub pool: &'a EmbeddingMatrix,
    /// Pair query embeddings; unused by the image-based strategy.
    pub queries: Option<&'a EmbeddingMatrix>,
    pub images: &'a EmbeddingMatrix,
    pub prompts: &'a EmbeddingMatrix,
    pub attr_text: &'a EmbeddingMatrix,
}

#[derive(Debug, Clone)]
pub struct ScoringOutput {
    pub cache: Option<Cache>,
    pub labels: Option<LabelMatrix>,
    pub zero_shot: ScoreMatrix,
    pub cache_scores: Option<ScoreMatrix>,
    pub fused: ScoreMatrix,
}

/// Builds, labels and applies the cache for `strategy`, then fuses.
pub fn run_scoring(inputs: &ScoringInputs<'_>, params: &HyperParams, strategy: CacheStrategy, seed: u64) -> Result<ScoringOutput> {
    params.validate()?;
    let names = inputs.vocab.attribute_names();
    let prompts = align_rows(inputs.prompts, &names, "prompt embeddings")?;
    let attr_text = align_rows(inputs.attr_text, &names, "attribute text embeddings")?;
    let zero_shot = zero_shot_scores(inputs.images, &prompts)?;

    if strategy == CacheStrategy::ImageBased {
        let fused = image_based_batch(inputs.images, &prompts, inputs.pool, &attr_text, params)?;
        return Ok(ScoringOutput {
            cache: None,
            labels: None,
            zero_shot,
            cache_scores: None,
            fused,
        });
    }

    let queries = inputs
        .queries
        .ok_or_else(|| Error::Config("cache construction needs query embeddings".into()))?;
    let mut cache_inputs = CacheInputs::new(inputs.vocab, queries, inputs.pool);
    if let Some(c) = inputs.compat {
        cache_inputs = cache_inputs.with_compat(c);
    }
    let cache = build_cache(&cache_inputs, params.k, seed, strategy)?;
    let labels = label_cache(&cache, &attr_text, params.soft_labels, params.alpha)?;
    let cache_scores = comca_cache_scores(
        inputs.images,
        &cache,
        &labels,
        &names,
        params.beta,
        params.eta_c,
        params.label_placement,
    )?;
    let fused = fuse_final(&cache_scores, &zero_shot, params.lambda, params.norm_mode)?;
    Ok(ScoringOutput {
        cache: Some(cache),
        labels: Some(labels),
        zero_shot,
        cache_scores: Some(cache_scores),
        fused,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    ZeroShot,
    Tip,
    TipIap,
    ImageBased,
}

/// `k` nearest pool images to each object prompt, labeled with the object.
pub fn object_cache(object_prompts: &EmbeddingMatrix, pool: &EmbeddingMatrix, k: usize) -> Result<Cache> {
    let mut entries = Vec::with_capacity(object_prompts.len() * k);
    for o in 0..object_prompts.len() {
        for r in retrieve_top_k(object_prompts.row(o), pool, k)? {
            entries.push(CacheEntry {
                image_id: pool.ids()[r].clone(),
                embedding: pool.row(r).to_vec(),
                source_attribute: Some(o),
                sampled_object: Some(o),
                query_text: None,
            });
        }
    }
    Ok(Cache {
        entries,
        shots_per_attribute: k,
        seed: 0,
        strategy: CacheStrategy::BruteForce,
    })
}

/// Attribute scores through the object: TIP-Adapter predicts `p(o | x)`
/// from an object cache, corpus counts supply `p(a | o)`.
pub fn tip_iap_scores(
    images: &EmbeddingMatrix,
    object_prompts: &EmbeddingMatrix,
    pool: &EmbeddingMatrix,
    compat: &CompatibilityTable,
    params: &HyperParams,
) -> Result<ScoreMatrix> {
    let object_prompts = align_rows(object_prompts, &compat.objects, "object prompt embeddings")?;
    let cache = object_cache(&object_prompts, pool, params.k)?;
    let clip = zero_shot_scores(images, &object_prompts)?;
    let tip = tip_cache_scores(images, &cache, &compat.objects, params.beta, params.eta_c)?;
    let logits = fuse_final(&tip, &clip, params.lambda, NormMode::None)?;
    let p_obj = to_distribution(&logits)?;
    iap_scores(&p_obj, &attr_given_object(&compat.phi_db), &compat.attributes)
}

/// Scores one baseline. The `tip` baseline uses hard labels only.
pub fn run_baseline(which: Baseline, inputs: &ScoringInputs<'_>, params: &HyperParams, seed: u64, object_prompts: Option<&EmbeddingMatrix>) -> Result<ScoreMatrix> {
    let names = inputs.vocab.attribute_names();
    let prompts = align_rows(inputs.prompts, &names, "prompt embeddings")?;
    match which {
        Baseline::ZeroShot => zero_shot_scores(inputs.images, &prompts),
        Baseline::Tip => {
            let queries = inputs
                .queries
                .ok_or_else(|| Error::Config("the tip baseline needs query embeddings".into()))?;
            let mut ci = CacheInputs::new(inputs.vocab, queries, inputs.pool);
            if let Some(c) = inputs.compat {
                ci = ci.with_compat(c);
            }
            let strategy = if inputs.compat.is_some() { CacheStrategy::Comca } else { CacheStrategy::Random };
            let cache = build_cache(&ci, params.k, seed, strategy)?;
            let tip = tip_cache_scores(inputs.images, &cache, &names, params.beta, params.eta_c)?;
            let zs = zero_shot_scores(inputs.images, &prompts)?;
            fuse_final(&tip, &zs, params.lambda, params.norm_mode)
        }
        Baseline::TipIap => {
            let compat = inputs
                .compat
                .ok_or_else(|| Error::Config("the tip-iap baseline needs a compatibility table".into()))?;
            let objects = object_prompts
                .ok_or_else(|| Error::Config("the tip-iap baseline needs object prompt embeddings".into()))?;
            tip_iap_scores(inputs.images, objects, inputs.pool, compat, params)
        }
        Baseline::ImageBased => {
            let attr_text = align_rows(inputs.attr_text, &names, "attribute text embeddings")?;
            image_based_batch(inputs.images, &prompts, inputs.pool, &attr_text, params)
        }
    }
}

/// Tracks files written into a run directory so a failed run can be
/// cleaned up.
struct RunDir {
    root: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
}

impl RunDir {
    fn open(root: &Path) -> Result<Self> {
        let created = !root.exists();
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            created,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str, companions: &[&str]) -> PathBuf {
        let p = self.root.join(name);
        for c in companions {
            self.written.push(self.root.join(format!("{name}{c}")));
        }
        self.written.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name, &[]);
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(&p, e))?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn remove(self) {
        if self.created {
            let _ = std::fs::remove_dir_all(&self.root);
        } else {
            for p in self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Input name to hex SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub map: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub eval: EvalResult,
    pub zero_shot_eval: EvalResult,
    pub manifest: RunManifest,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn input_paths(cfg: &RunConfig) -> Vec<(&'static str, &Path)> {
    let p = &cfg.paths;
    [
        ("vocab", &p.vocab),
        ("corpus", &p.corpus),
        ("compat", &p.compat),
        ("llm_scores", &p.llm_scores),
        ("pool", &p.pool),
        ("queries", &p.queries),
        ("images", &p.images),
        ("prompts", &p.prompts),
        ("attr_text", &p.attr_text),
        ("annotations", &p.annotations),
    ]
    .into_iter()
    .filter_map(|(n, p)| p.as_deref().map(|p| (n, p)))
    .collect()
}

fn digest_inputs(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (name, path) in input_paths(cfg) {
        if path.exists() {
            out.insert(name.to_string(), file_digest(path)?);
        }
    }
    Ok(out)
}

/// Loads every input named by `cfg`, runs the method, evaluates fused and
/// zero-shot scores, and writes artifacts plus a manifest into the run
/// directory. On failure, files written so far are removed unless
/// `keep_partial`.
pub fn run_pipeline(cfg: &RunConfig, client: Option<&dyn ChatClient>, keep_partial: bool) -> Result<RunReport> {
    cfg.validate()?;
    let root = cfg
        .paths
        .run_dir
        .clone()
        .ok_or_else(|| Error::Config("no run_dir configured".into()))?;
    // check inputs before touching the run directory
    for (name, path) in [
        ("vocab", &cfg.paths.vocab),
        ("pool", &cfg.paths.pool),
        ("images", &cfg.paths.images),
        ("prompts", &cfg.paths.prompts),
        ("attr_text", &cfg.paths.attr_text),
        ("annotations", &cfg.paths.annotations),
    ] {
        cfg.require(name, path)?;
    }
    let mut dir = RunDir::open(&root)?;
    match write_run(cfg, client, &mut dir) {
        Ok(report) => Ok(report),
        Err(e) => {
            if !keep_partial {
                dir.remove();
            }
            Err(e)
        }
    }
}

fn write_run(cfg: &RunConfig, client: Option<&dyn ChatClient>, dir: &mut RunDir) -> Result<RunReport> {
    let vocab = Vocabulary::load(cfg.require("vocab", &cfg.paths.vocab)?)?;
    let pool = load_embeddings(cfg.require("pool", &cfg.paths.pool)?)?;
    let images = load_embeddings(cfg.require("images", &cfg.paths.images)?)?;
    let prompts = load_embeddings(cfg.require("prompts", &cfg.paths.prompts)?)?;
    let attr_text = load_embeddings(cfg.require("attr_text", &cfg.paths.attr_text)?)?;
    let annotations = AnnotationSet::load(cfg.require("annotations", &cfg.paths.annotations)?)?;
    let queries = match cfg.strategy {
        CacheStrategy::ImageBased => None,
        _ => Some(load_embeddings(cfg.require("queries", &cfg.paths.queries)?)?),
    };
    let compat = match (cfg.strategy, &cfg.paths.compat) {
        (CacheStrategy::Comca, Some(p)) => Some(CompatibilityTable::load(p)?),
        (CacheStrategy::Comca, None) => Some(compute_compat(cfg, client)?),
        _ => None,
    };

    let inputs = ScoringInputs {
        vocab: &vocab,
        compat: compat.as_ref(),
        pool: &pool,
        queries: queries.as_ref(),
        images: &images,
        prompts: &prompts,
        attr_text: &attr_text,
    };
    let out = run_scoring(&inputs, &cfg.params, cfg.strategy, cfg.seed)?;
    let eval = evaluate(&out.fused, &annotations)?;
    let zero_shot_eval = evaluate(&out.zero_shot, &annotations)?;

    if let Some(c) = &compat {
        let p = dir.path("compat.json", &[]);
        c.save(&p)?;
    }
    if let (Some(cache), Some(labels)) = (&out.cache, &out.labels) {
        let p = dir.path("cache.json", &[]);
        CacheManifest::from_cache(cache, &vocab).save(&p)?;
        let p = dir.path("labels.bin", &[".ids.jsonl", ".meta.json"]);
        labels.save(&p, cache)?;
    }
    let mut save_scores = |name: &str, s: &ScoreMatrix| -> Result<()> {
        let p = dir.path(name, &[".bin"]);
        s.save(&p)
    };
    save_scores("zero_shot.json", &out.zero_shot)?;
    if let Some(s) = &out.cache_scores {
        save_scores("cache_scores.json", s)?;
    }
    save_scores("fused.json", &out.fused)?;
    dir.write_json("eval.json", &eval)?;
    dir.write_json("eval_zero_shot.json", &zero_shot_eval)?;

    let artifacts = dir
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs: digest_inputs(cfg)?,
        artifacts,
        map: eval.map,
    };
    dir.write_json(MANIFEST_FILE, &manifest)?;
    Ok(RunReport {
        run_dir: dir.root.clone(),
        eval,
        zero_shot_eval,
        manifest,
    })
}

/// Re-runs a recorded run into `out_dir` after checking that the recorded
/// config and inputs are unchanged, then checks that the new evaluation is
/// identical.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<RunReport> {
    if !manifest_path.exists() {
        return Err(Error::MissingPath(manifest_path.to_path_buf()));
    }
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::ReplayMismatch("config does not match its recorded hash".into()));
    }
    let now = digest_inputs(&manifest.config)?;
    if now != manifest.inputs {
        let changed: Vec<&String> = manifest
            .inputs
            .iter()
            .filter(|(k, v)| now.get(*k) != Some(*v))
            .map(|(k, _)| k)
            .collect();
        return Err(Error::ReplayMismatch(format!("inputs changed since the run: {changed:?}")));
    }
    let mut cfg = manifest.config.clone();
    cfg.paths.run_dir = Some(out_dir.to_path_buf());
    let report = run_pipeline(&cfg, None, false)?;
    let original = manifest_path.parent().unwrap_or(Path::new(".")).join("eval.json");
    let before = std::fs::read(&original).map_err(|e| Error::io(&original, e))?;
    let after_path = out_dir.join("eval.json");
    let after = std::fs::read(&after_path).map_err(|e| Error::io(&after_path, e))?;
    if before != after {
        return Err(Error::ReplayMismatch("evaluation differs from the recorded run".into()));
    }
    Ok(report)
}
