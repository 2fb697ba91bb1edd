//! Run configuration: built-in defaults, overridden by a JSON file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::CacheStrategy;
use crate::compat::{CombineMode, LlmConfig, MatchConfig};
use crate::error::{Error, Result};
use crate::rng::GENERATOR;
use crate::scoring::HyperParams;

/// Every input a run can touch. Paths are optional here; each command
/// checks the ones it needs with [`RunConfig::require`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Precomputed compatibility table; when set, the corpus is not read.
    pub compat: Option<PathBuf>,
    /// JSONL store of LLM scores.
    pub llm_scores: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Test region embeddings.
    pub images: Option<PathBuf>,
    /// Zero-shot inference prompts, one row per attribute.
    pub prompts: Option<PathBuf>,
    /// Averaged soft-label templates, one row per attribute.
    pub attr_text: Option<PathBuf>,
    /// Object prompts, one row per object (only the IAP baseline).
    pub object_prompts: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(flatten)]
    pub params: HyperParams,
    pub strategy: CacheStrategy,
    pub combine_mode: CombineMode,
    /// Skip the LLM and use corpus counts alone.
    pub db_only: bool,
    pub matching: MatchConfig,
    /// Corpus shards counted in parallel; 0 means one per worker thread.
    pub shards: usize,
    pub llm: LlmConfig,
    pub seed: u64,
    pub rng: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            params: HyperParams::default(),
            strategy: CacheStrategy::Comca,
            combine_mode: CombineMode::Multiply,
            db_only: false,
            matching: MatchConfig::default(),
            shards: 0,
            llm: LlmConfig::default(),
            seed: 0,
            rng: GENERATOR.to_string(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies a JSON object of overrides on top of this config, field by
    /// field, recursing into nested objects.
    pub fn merged(&self, overrides: serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge_json(&mut base, overrides);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.rng != GENERATOR {
            return Err(Error::Config(format!(
                "unsupported generator {:?}, only {GENERATOR:?} is available",
                self.rng
            )));
        }
        Ok(())
    }

    /// Returns the path, or a config error if unset, or `MissingPath` if it
    /// does not exist.
    pub fn require<'a>(&self, name: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Config(format!("no {name} path configured")))?;
        if !p.exists() {
            return Err(Error::MissingPath(p.to_path_buf()));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn merge_json(base: &mut serde_json::Value, overrides: serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{EtaForm, NormMode};
    use serde_json::json;

    #[test]
    fn defaults_serialize_exactly() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        assert_eq!(v["lambda"], json!(1.17));
        assert_eq!(v["beta"], json!(1.0));
        assert_eq!(v["alpha"], json!(0.6));
        assert_eq!(v["k"], json!(16));
        assert_eq!(v["norm_mode"], json!("max_softmax"));
        assert_eq!(v["eta_c"], json!("tip"));
        assert_eq!(v["eq10_form"], json!("outside"));
        assert_eq!(v["strategy"], json!("comca"));
        assert_eq!(v["rng"], json!("chacha8"));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"lambda": 0.0, "paths": {"vocab": "v.json"}, "llm": {"batch_size": 10}}"#).unwrap();
        assert_eq!(c.params.lambda, 0.0);
        assert_eq!(c.params.k, 16);
        assert_eq!(c.paths.vocab, Some(PathBuf::from("v.json")));
        assert_eq!(c.llm.batch_size, 10);
        assert_eq!(c.llm.retries, 3);
    }

    #[test]
    fn precedence() {
        let file: RunConfig = serde_json::from_str(r#"{"k": 4, "beta": 2.0, "eta_c": "paper"}"#).unwrap();
        let flags = json!({"k": 8, "seed": 7});
        let c = file.merged(flags).unwrap();
        assert_eq!(c.params.k, 8);
        assert_eq!(c.params.beta, 2.0);
        assert_eq!(c.params.eta_c, EtaForm::Paper);
        assert_eq!(c.params.norm_mode, NormMode::MaxSoftmax);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn validation() {
        let bad = RunConfig::default().merged(json!({"alpha": 1.5})).unwrap();
        assert!(matches!(bad.validate(), Err(Error::AlphaOutOfRange(_))));
        let bad = RunConfig::default().merged(json!({"rng": "pcg"})).unwrap();
        assert_eq!(bad.validate().unwrap_err().class().exit_code(), 1);
        assert!(RunConfig::default().merged(json!({"norm_mode": "nope"})).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), a.merged(json!({"seed": 1})).unwrap().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn require_paths() {
        let c = RunConfig::default().merged(json!({"paths": {"corpus": "/nonexistent/corpus.tsv"}})).unwrap();
        match c.require("corpus", &c.paths.corpus) {
            Err(Error::MissingPath(p)) => assert_eq!(p, PathBuf::from("/nonexistent/corpus.tsv")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(c.require("vocab", &c.paths.vocab), Err(Error::Config(_))));
    }
}
