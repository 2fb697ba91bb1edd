//! LLM-predicted compatibility scores on a 0–10 scale.
//!
//! Objects are sent in chunks of `batch_size` per attribute. Each response is
//! expected to hold lines shaped `x. category: score`; categories are matched
//! back to the request by name, case-insensitively. Scores are persisted to an
//! append-only JSON-lines cache keyed by attribute, object, model and a hash of
//! the prompt template, so a second run never touches the network.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prompts::{render, LLM_TEMPLATE};
use crate::vocab::Vocabulary;

pub const API_KEY_ENV: &str = "COMCA_LLM_API_KEY";

/// Anything that can answer a single-turn chat prompt.
pub trait ChatClient {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub batch_size: usize,
    pub retries: usize,
    pub retry_backoff_ms: u64,
    pub timeout_secs: u64,
    /// Substituted (with a warning) for pairs the LLM never scored.
    pub fallback_score: Option<f64>,
    pub template: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            batch_size: 100,
            retries: 3,
            retry_backoff_ms: 500,
            timeout_secs: 120,
            fallback_score: Some(5.0),
            template: LLM_TEMPLATE.into(),
        }
    }
}

impl LlmConfig {
    /// Short hash identifying the template, part of every cache key.
    pub fn prompt_hash(&self) -> String {
        let digest = Sha256::digest(self.template.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Blocking client for chat-completions-compatible HTTP endpoints.
pub struct HttpChatClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(cfg: &LlmConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpChatClient {
            http,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl ChatClient for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let transport = |message: String| Error::LlmTransport { attempts: 1, message };
        let body = ChatRequest {
            model: &self.model,
            temperature: self.temperature,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        };
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(transport(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| transport("response has no message content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheLine {
    attribute: String,
    object: String,
    model: String,
    prompt_hash: String,
    score: f64,
}

type CacheKey = (String, String, String, String);

/// Append-only score cache. Later lines win over earlier ones with the same key.
#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: HashMap<CacheKey, f64>,
}

impl ScoreCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; new scores are appended to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let l: CacheLine = serde_json::from_str(line)
                    .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
                entries.insert((l.attribute, l.object, l.model, l.prompt_hash), l.score);
            }
        }
        Ok(ScoreCache {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, attribute: &str, object: &str, model: &str, prompt_hash: &str) -> Option<f64> {
        self.entries
            .get(&(attribute.into(), object.into(), model.into(), prompt_hash.into()))
            .copied()
    }

    fn insert_all(&mut self, lines: Vec<CacheLine>) -> Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let mut file: File = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut buf = String::new();
            for l in &lines {
                buf.push_str(&serde_json::to_string(l).expect("cache line serializes"));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        for l in lines {
            self.entries
                .insert((l.attribute, l.object, l.model, l.prompt_hash), l.score);
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct LlmScores {
    pub phi_llm: Matrix,
    /// Number of chat requests issued, retries excluded.
    pub requests: usize,
    /// `(attribute, object)` pairs that received the fallback score.
    pub fallbacks: Vec<(String, String)>,
}

/// Parsed response: scores by position in the requested chunk, plus lines
/// that looked like `name: score` but could not be matched.
#[derive(Debug, Default, PartialEq)]
pub struct ParsedResponse {
    pub scores: HashMap<usize, f64>,
    pub unmatched: Vec<String>,
}

fn score_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:[-*]\s*)?(?:\d+\s*[.)]\s*)?(.+?)\s*:\s*(-?\d+(?:\.\d+)?)\s*$").unwrap()
    })
}

/// Matches response lines to the requested categories. Lines that do not end
/// in `: <number>` are treated as chatter and ignored.
pub fn parse_response(response: &str, categories: &[&str]) -> ParsedResponse {
    let mut out = ParsedResponse::default();
    let lookup: HashMap<String, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.trim().to_lowercase(), i))
        .collect();
    for line in response.lines() {
        let line = line.trim();
        let Some(caps) = score_line().captures(line) else {
            continue;
        };
        let name = caps[1].trim_matches(|c: char| c == '*' || c == '"' || c == '\'' || c == '`');
        let score: f64 = caps[2].parse().unwrap_or(f64::NAN);
        match lookup.get(&name.trim().to_lowercase()) {
            Some(&i) if (0.0..=10.0).contains(&score) => {
                out.scores.insert(i, score);
            }
            _ => out.unmatched.push(line.to_string()),
        }
    }
    out
}

/// Renders the compatibility prompt for one chunk of categories.
pub fn render_prompt(template: &str, attribute: &str, categories: &[&str]) -> Result<String> {
    let list = categories
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let count = categories.len().to_string();
    render(
        template,
        &[("count_categories", &count), ("categories", &list), ("attribute", attribute)],
    )
}

fn complete_with_retries(client: &dyn ChatClient, prompt: &str, cfg: &LlmConfig) -> Result<String> {
    let attempts = cfg.retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        match client.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(Error::LlmTransport { message, .. }) => {
                log::warn!("LLM request failed (attempt {}/{attempts}): {message}", attempt + 1);
                last = message;
                if attempt + 1 < attempts && cfg.retry_backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(cfg.retry_backoff_ms << attempt));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(Error::LlmTransport {
        attempts,
        message: last,
    })
}

/// Scores one chunk: one request, plus one repair request for categories the
/// first response left out.
fn score_chunk(
    client: &dyn ChatClient,
    cfg: &LlmConfig,
    attribute: &str,
    chunk: &[&str],
    requests: &mut usize,
) -> Result<HashMap<usize, f64>> {
    let prompt = render_prompt(&cfg.template, attribute, chunk)?;
    let first = complete_with_retries(client, &prompt, cfg)?;
    *requests += 1;
    let mut parsed = parse_response(&first, chunk);
    let missing: Vec<usize> = (0..chunk.len()).filter(|i| !parsed.scores.contains_key(i)).collect();
    if missing.is_empty() {
        if !parsed.unmatched.is_empty() {
            log::debug!("ignoring {} stray line(s) for {attribute:?}", parsed.unmatched.len());
        }
        return Ok(parsed.scores);
    }
    let retry: Vec<&str> = missing.iter().map(|&i| chunk[i]).collect();
    log::warn!("re-querying {} unscored categories for {attribute:?}", retry.len());
    let prompt = render_prompt(&cfg.template, attribute, &retry)?;
    let second = complete_with_retries(client, &prompt, cfg)?;
    *requests += 1;
    let repair = parse_response(&second, &retry);
    if repair.scores.len() < retry.len() {
        if let Some(line) = repair.unmatched.into_iter().next() {
            return Err(Error::LlmParse {
                attribute: attribute.to_string(),
                line,
            });
        }
    }
    for (j, score) in repair.scores {
        parsed.scores.insert(missing[j], score);
    }
    Ok(parsed.scores)
}

/// Fills the `|A| x |O|` LLM score matrix, consulting `cache` first. With no
/// client, every pair must already be cached.
pub fn llm_score_pairs(
    vocab: &Vocabulary,
    client: Option<&dyn ChatClient>,
    cfg: &LlmConfig,
    cache: &mut ScoreCache,
) -> Result<LlmScores> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("LLM batch size must be positive".into()));
    }
    let model = client.map_or(cfg.model.as_str(), |c| c.model_id()).to_string();
    let hash = cfg.prompt_hash();
    let objects = vocab.objects();
    let mut phi = Matrix::zeros(vocab.attributes().len(), objects.len());
    let mut requests = 0;
    let mut unscored = Vec::new();

    for (a, attr) in vocab.attributes().iter().enumerate() {
        let mut todo = Vec::new();
        for (o, obj) in objects.iter().enumerate() {
            match cache.get(&attr.name, obj, &model, &hash) {
                Some(s) => phi.set(a, o, s),
                None => todo.push(o),
            }
        }
        if todo.is_empty() {
            continue;
        }
        let client = client.ok_or_else(|| Error::LlmTransport {
            attempts: 0,
            message: format!("no LLM client and {} uncached pair(s) for {:?}", todo.len(), attr.name),
        })?;
        for chunk in todo.chunks(cfg.batch_size) {
            let names: Vec<&str> = chunk.iter().map(|&o| objects[o].as_str()).collect();
            let scores = score_chunk(client, cfg, &attr.name, &names, &mut requests)?;
            let mut fresh = Vec::with_capacity(scores.len());
            for (i, &o) in chunk.iter().enumerate() {
                match scores.get(&i) {
                    Some(&s) => {
                        phi.set(a, o, s);
                        fresh.push(CacheLine {
                            attribute: attr.name.clone(),
                            object: objects[o].clone(),
                            model: model.clone(),
                            prompt_hash: hash.clone(),
                            score: s,
                        });
                    }
                    None => unscored.push((a, o)),
                }
            }
            cache.insert_all(fresh)?;
        }
    }

    let pairs: Vec<(String, String)> = unscored
        .iter()
        .map(|&(a, o)| (vocab.attributes()[a].name.clone(), objects[o].clone()))
        .collect();
    if !pairs.is_empty() {
        let Some(fallback) = cfg.fallback_score else {
            return Err(Error::MissingScore { pairs });
        };
        log::warn!(
            "LLM gave no score for {} pair(s); using fallback {fallback} (first: {:?})",
            pairs.len(),
            pairs[0]
        );
        for &(a, o) in &unscored {
            phi.set(a, o, fallback);
        }
    }
    Ok(LlmScores {
        phi_llm: phi,
        requests,
        fallbacks: pairs,
    })
}
