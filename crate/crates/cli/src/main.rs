use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use comca::cache::{build_cache, CacheInputs, CacheManifest, CacheStrategy};
use comca::compat::{ChatClient, CompatibilityTable};
use comca::config::RunConfig;
use comca::eval::{evaluate, AnnotationSet};
use comca::labels::label_cache;
use comca::pipeline::{
    align_rows, client_from_env, compute_compat, load_embeddings, replay, run_baseline, run_pipeline, Baseline,
    ScoringInputs,
};
use comca::scoring::{comca_cache_scores, fuse_final, image_based_batch, zero_shot_scores, ScoreMatrix};
use comca::vocab::Vocabulary;
use comca::{Error, Result};

#[derive(Parser)]
#[command(name = "comca", version, about = "Compositional caching for open-vocabulary attribute detection")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate attribute-object compatibility from a corpus and an LLM.
    Compat {
        #[command(flatten)]
        inputs: Inputs,
        /// Use corpus counts only; no LLM requests.
        #[arg(long)]
        db_only: bool,
        /// multiply, sum, llm_only, db_only or uniform.
        #[arg(long)]
        combine_mode: Option<String>,
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve the exemplar cache and write its manifest.
    BuildCache {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score test images against a cache and fuse with zero-shot scores.
    Score {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        tuning: Tuning,
        /// Cache manifest from `build-cache`.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Hyperparameter file, layered over `--config`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked mAP of a score matrix.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-attribute CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cache, labels, scores, fusion and evaluation in one run directory.
    Pipeline {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Keep artifacts of a failed run.
        #[arg(long)]
        keep_partial: bool,
        /// Re-run the run recorded in this manifest into `--run-dir`.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Score with a comparison method.
    Baseline {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    ZeroShot,
    Tip,
    TipIap,
    ImageBased,
}

impl From<Method> for Baseline {
    fn from(m: Method) -> Self {
        match m {
            Method::ZeroShot => Baseline::ZeroShot,
            Method::Tip => Baseline::Tip,
            Method::TipIap => Baseline::TipIap,
            Method::ImageBased => Baseline::ImageBased,
        }
    }
}

#[derive(Args, Default)]
struct Inputs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Compatibility table from `compat`.
    #[arg(long)]
    compat: Option<PathBuf>,
    /// JSONL store of LLM scores.
    #[arg(long)]
    llm_scores: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    attr_text: Option<PathBuf>,
    #[arg(long)]
    object_prompts: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Tuning {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// comca, random, brute_force or image_based.
    #[arg(long)]
    strategy: Option<String>,
    /// max_softmax, min_max or none.
    #[arg(long)]
    norm_mode: Option<String>,
    /// tip or paper.
    #[arg(long)]
    eta_c: Option<String>,
    /// outside or inside.
    #[arg(long = "eq10-form")]
    label_placement: Option<String>,
    /// standardized, softmax_only, raw_soft or sharpen.
    #[arg(long)]
    soft_labels: Option<String>,
}

fn put<T: Into<Value>>(map: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(key.into(), v.into());
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| Value::String(p.to_string_lossy().into_owned()))
}

impl Inputs {
    fn overrides(&self, into: &mut Map<String, Value>) {
        let mut paths = Map::new();
        for (k, v) in [
            ("vocab", &self.vocab),
            ("corpus", &self.corpus),
            ("compat", &self.compat),
            ("llm_scores", &self.llm_scores),
            ("pool", &self.pool),
            ("queries", &self.queries),
            ("images", &self.images),
            ("prompts", &self.prompts),
            ("attr_text", &self.attr_text),
            ("object_prompts", &self.object_prompts),
            ("annotations", &self.annotations),
        ] {
            put(&mut paths, k, path_value(v));
        }
        merge_paths(into, paths);
    }
}

fn merge_paths(into: &mut Map<String, Value>, paths: Map<String, Value>) {
    if paths.is_empty() {
        return;
    }
    match into.get_mut("paths") {
        Some(Value::Object(existing)) => existing.extend(paths),
        _ => {
            into.insert("paths".into(), Value::Object(paths));
        }
    }
}

impl Tuning {
    fn overrides(&self, into: &mut Map<String, Value>) {
        put(into, "k", self.k);
        put(into, "lambda", self.lambda);
        put(into, "beta", self.beta);
        put(into, "alpha", self.alpha);
        put(into, "strategy", self.strategy.clone());
        put(into, "norm_mode", self.norm_mode.clone());
        put(into, "eta_c", self.eta_c.clone());
        put(into, "eq10_form", self.label_placement.clone());
        put(into, "soft_labels", self.soft_labels.clone());
    }
}

/// Defaults, then each config file in order, then flag overrides.
fn resolve_config(files: &[&Path], flags: Map<String, Value>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| {
            if f.exists() {
                Error::io(f, e)
            } else {
                Error::MissingPath(f.to_path_buf())
            }
        })?;
        let layer: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
        cfg = cfg.merged(layer)?;
    }
    let cfg = cfg.merged(Value::Object(flags))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_client<T>(cfg: &RunConfig, f: impl FnOnce(Option<&dyn ChatClient>) -> Result<T>) -> Result<T> {
    let client = if cfg.db_only { None } else { client_from_env(cfg)? };
    if client.is_none() && !cfg.db_only && cfg.paths.compat.is_none() {
        log::info!("no API key set; LLM scores must come from the score store");
    }
    f(client.as_ref().map(|c| c as &dyn ChatClient))
}

struct Loaded {
    vocab: Vocabulary,
    pool: comca::embedding::EmbeddingMatrix,
    images: comca::embedding::EmbeddingMatrix,
    prompts: comca::embedding::EmbeddingMatrix,
    attr_text: comca::embedding::EmbeddingMatrix,
    queries: Option<comca::embedding::EmbeddingMatrix>,
    compat: Option<CompatibilityTable>,
}

fn load_scoring(cfg: &RunConfig, need_queries: bool, need_compat: bool) -> Result<Loaded> {
    let p = &cfg.paths;
    let vocab = Vocabulary::load(cfg.require("vocab", &p.vocab)?)?;
    let pool = load_embeddings(cfg.require("pool", &p.pool)?)?;
    let images = load_embeddings(cfg.require("images", &p.images)?)?;
    let prompts = load_embeddings(cfg.require("prompts", &p.prompts)?)?;
    let attr_text = load_embeddings(cfg.require("attr_text", &p.attr_text)?)?;
    let queries = if need_queries {
        Some(load_embeddings(cfg.require("queries", &p.queries)?)?)
    } else {
        None
    };
    let compat = if need_compat {
        Some(CompatibilityTable::load(cfg.require("compat", &p.compat)?)?)
    } else {
        None
    };
    Ok(Loaded {
        vocab,
        pool,
        images,
        prompts,
        attr_text,
        queries,
        compat,
    })
}

fn print_eval_summary(label: &str, r: &comca::eval::EvalResult) {
    let buckets: Vec<String> = r.per_bucket.iter().map(|(b, v)| format!("{b} {v:.4}")).collect();
    println!("{label}: mAP {:.4} ({})", r.map, buckets.join(", "));
}

fn run(cli: Cli) -> Result<()> {
    let mut flags = Map::new();
    put(&mut flags, "seed", cli.seed);
    let config_files: Vec<&Path> = cli.config.iter().map(PathBuf::as_path).collect();

    match cli.command {
        Command::Compat {
            inputs,
            db_only,
            combine_mode,
            shards,
            out,
        } => {
            inputs.overrides(&mut flags);
            if db_only {
                flags.insert("db_only".into(), json!(true));
            }
            put(&mut flags, "combine_mode", combine_mode);
            put(&mut flags, "shards", shards);
            let mut cfg = resolve_config(&config_files, flags)?;
            cfg.paths.compat = None;
            let table = with_client(&cfg, |c| compute_compat(&cfg, c))?;
            table.save(&out)?;
            for (a, name) in table.attributes.iter().enumerate() {
                let top: Vec<String> = table
                    .top_objects(a, 5)
                    .into_iter()
                    .map(|(o, s)| format!("{o} ({s:.3})"))
                    .collect();
                println!("{name}: {}", top.join(", "));
            }
        }
        Command::BuildCache { inputs, tuning, out } => {
            inputs.overrides(&mut flags);
            tuning.overrides(&mut flags);
            let cfg = resolve_config(&config_files, flags)?;
            let p = &cfg.paths;
            let vocab = Vocabulary::load(cfg.require("vocab", &p.vocab)?)?;
            let pool = load_embeddings(cfg.require("pool", &p.pool)?)?;
            let queries = load_embeddings(cfg.require("queries", &p.queries)?)?;
            let compat = match cfg.strategy {
                CacheStrategy::Comca => Some(CompatibilityTable::load(cfg.require("compat", &p.compat)?)?),
                _ => None,
            };
            let mut ci = CacheInputs::new(&vocab, &queries, &pool);
            if let Some(c) = &compat {
                ci = ci.with_compat(c);
            }
            let cache = build_cache(&ci, cfg.params.k, cfg.seed, cfg.strategy)?;
            CacheManifest::from_cache(&cache, &vocab).save(&out)?;
            log::info!("cache of {} entries written to {}", cache.len(), out.display());
        }
        Command::Score {
            inputs,
            tuning,
            cache,
            params,
            out,
        } => {
            inputs.overrides(&mut flags);
            tuning.overrides(&mut flags);
            let mut files = config_files.clone();
            if let Some(p) = &params {
                files.push(p);
            }
            let cfg = resolve_config(&files, flags)?;
            let l = load_scoring(&cfg, false, false)?;
            let names = l.vocab.attribute_names();
            let prompts = align_rows(&l.prompts, &names, "prompt embeddings")?;
            let attr_text = align_rows(&l.attr_text, &names, "attribute text embeddings")?;
            let scores = if cfg.strategy == CacheStrategy::ImageBased {
                image_based_batch(&l.images, &prompts, &l.pool, &attr_text, &cfg.params)?
            } else {
                let manifest = cache
                    .as_deref()
                    .ok_or_else(|| Error::Config("score needs --cache unless the strategy is image_based".into()))?;
                let cache = CacheManifest::load(manifest)?.resolve(&l.vocab, &l.pool)?;
                let labels = label_cache(&cache, &attr_text, cfg.params.soft_labels, cfg.params.alpha)?;
                let p = &cfg.params;
                let cache_scores = comca_cache_scores(&l.images, &cache, &labels, &names, p.beta, p.eta_c, p.label_placement)?;
                let zero_shot = zero_shot_scores(&l.images, &prompts)?;
                fuse_final(&cache_scores, &zero_shot, p.lambda, p.norm_mode)?
            };
            scores.save(&out)?;
        }
        Command::Eval {
            scores,
            annotations,
            out,
            csv,
        } => {
            let scores = ScoreMatrix::load(&scores)?;
            let ann = AnnotationSet::load(&annotations)?;
            let result = evaluate(&scores, &ann)?;
            match &out {
                Some(p) => write_text(p, &(result.to_json() + "\n"))?,
                None => println!("{}", result.to_json()),
            }
            if let Some(p) = &csv {
                write_text(p, &result.to_csv())?;
            }
        }
        Command::Pipeline {
            inputs,
            tuning,
            run_dir,
            keep_partial,
            replay: replay_from,
        } => {
            if let Some(manifest) = replay_from {
                let dir = run_dir.ok_or_else(|| Error::Config("--replay needs --run-dir for the new run".into()))?;
                let report = replay(&manifest, &dir)?;
                print_eval_summary("replayed", &report.eval);
                return Ok(());
            }
            inputs.overrides(&mut flags);
            tuning.overrides(&mut flags);
            merge_paths(&mut flags, {
                let mut m = Map::new();
                put(&mut m, "run_dir", path_value(&run_dir));
                m
            });
            let cfg = resolve_config(&config_files, flags)?;
            let report = with_client(&cfg, |c| run_pipeline(&cfg, c, keep_partial))?;
            print_eval_summary("zero-shot", &report.zero_shot_eval);
            print_eval_summary("fused", &report.eval);
            println!("artifacts in {}", report.run_dir.display());
        }
        Command::Baseline {
            method,
            inputs,
            tuning,
            out,
        } => {
            inputs.overrides(&mut flags);
            tuning.overrides(&mut flags);
            let cfg = resolve_config(&config_files, flags)?;
            let which = Baseline::from(method);
            let need_compat = match which {
                Baseline::TipIap => true,
                Baseline::Tip => cfg.paths.compat.is_some(),
                _ => false,
            };
            let l = load_scoring(&cfg, which == Baseline::Tip, need_compat)?;
            let object_prompts = match which {
                Baseline::TipIap => Some(load_embeddings(cfg.require("object_prompts", &cfg.paths.object_prompts)?)?),
                _ => None,
            };
            let inputs = ScoringInputs {
                vocab: &l.vocab,
                compat: l.compat.as_ref(),
                pool: &l.pool,
                queries: l.queries.as_ref(),
                images: &l.images,
                prompts: &l.prompts,
                attr_text: &l.attr_text,
            };
            let scores = run_baseline(which, &inputs, &cfg.params, cfg.seed, object_prompts.as_ref())?;
            scores.save(&out)?;
            if let Some(a) = &cfg.paths.annotations {
                let result = evaluate(&scores, &AnnotationSet::load(a)?)?;
                print_eval_summary("baseline", &result);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
