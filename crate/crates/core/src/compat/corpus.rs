//! Co-occurrence counting over a caption corpus.
//!
//! The corpus is UTF-8 TSV, one `id<TAB>caption[<TAB>url]` record per line.
//! A caption is lowercased and split on anything that is not alphanumeric.
//! A vocabulary term (attribute, attribute synonym, or object; possibly
//! several words) matches when its tokens appear contiguously. With plural
//! handling on, a caption token ending in `s` or `es` also matches the bare
//! vocabulary token, so `cars` matches `car` but `carpet` does not.
//!
//! Each caption adds at most one to any `(attribute, object)` cell.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Dense row-major matrix of counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CountMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CountMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::ShapeMismatch("ragged count rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.data
    }

    fn increment(&mut self, r: usize, c: usize) {
        self.data[r * self.cols + c] += 1;
    }

    fn add(&mut self, other: &CountMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl Serialize for CountMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq((0..self.rows).map(|r| self.row(r)))
    }
}

impl<'de> Deserialize<'de> for CountMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u64>>::deserialize(d)?;
        CountMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub plurals: bool,
    pub synonyms: bool,
    pub smoothing: Smoothing,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            plurals: true,
            synonyms: true,
            smoothing: Smoothing::None,
        }
    }
}

#[derive(Debug)]
pub struct CooccurrenceCounts {
    pub phi_db: CountMatrix,
    /// Well-formed records seen.
    pub records: usize,
    /// Malformed records, skipped.
    pub malformed: Vec<Error>,
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

struct Term {
    tokens: Vec<String>,
    target: usize,
}

/// Multi-word term matcher indexed by first token.
struct TermSet {
    terms: Vec<Term>,
    by_first: HashMap<String, Vec<usize>>,
    targets: usize,
}

impl TermSet {
    fn new(entries: impl IntoIterator<Item = (String, usize)>, targets: usize) -> Self {
        let mut terms = Vec::new();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (text, target) in entries {
            let tokens = tokenize(&text);
            let Some(first) = tokens.first() else { continue };
            by_first.entry(first.clone()).or_default().push(terms.len());
            terms.push(Term { tokens, target });
        }
        TermSet {
            terms,
            by_first,
            targets,
        }
    }

    /// Marks every target that has a term present in `tokens`.
    fn present(&self, tokens: &[String], plurals: bool) -> Vec<bool> {
        let mut hit = vec![false; self.targets];
        for start in 0..tokens.len() {
            for base in candidate_bases(&tokens[start], plurals) {
                let Some(ids) = self.by_first.get(base) else { continue };
                for &id in ids {
                    let term = &self.terms[id];
                    if !hit[term.target] && matches_at(tokens, start, &term.tokens, plurals) {
                        hit[term.target] = true;
                    }
                }
            }
        }
        hit
    }
}

fn candidate_bases(token: &str, plurals: bool) -> impl Iterator<Item = &str> {
    let mut out = [Some(token), None, None];
    if plurals {
        out[1] = token.strip_suffix('s').filter(|s| !s.is_empty());
        out[2] = token.strip_suffix("es").filter(|s| !s.is_empty());
    }
    out.into_iter().flatten()
}

fn token_matches(caption_token: &str, vocab_token: &str, plurals: bool) -> bool {
    caption_token == vocab_token
        || (plurals
            && caption_token
                .strip_prefix(vocab_token)
                .is_some_and(|rest| rest == "s" || rest == "es"))
}

fn matches_at(tokens: &[String], start: usize, term: &[String], plurals: bool) -> bool {
    tokens.len() - start >= term.len()
        && term
            .iter()
            .zip(&tokens[start..])
            .all(|(v, c)| token_matches(c, v, plurals))
}

/// Compiled vocabulary matcher, shared read-only across shards.
pub struct CaptionMatcher {
    attributes: TermSet,
    objects: TermSet,
    config: MatchConfig,
}

impl CaptionMatcher {
    pub fn new(vocab: &Vocabulary, config: MatchConfig) -> Self {
        let attr_terms = vocab.attributes().iter().enumerate().flat_map(|(i, a)| {
            let synonyms = if config.synonyms { a.synonyms.as_slice() } else { &[] };
            std::iter::once((a.name.clone(), i)).chain(synonyms.iter().map(move |s| (s.clone(), i)))
        });
        let attributes = TermSet::new(attr_terms.collect::<Vec<_>>(), vocab.attributes().len());
        let objects = TermSet::new(
            vocab.objects().iter().cloned().enumerate().map(|(i, o)| (o, i)),
            vocab.objects().len(),
        );
        CaptionMatcher {
            attributes,
            objects,
            config,
        }
    }

    /// Adds one caption's pairs to `counts`.
    pub fn count_caption(&self, caption: &str, counts: &mut CountMatrix) {
        let tokens = tokenize(caption);
        if tokens.is_empty() {
            return;
        }
        let objs = self.objects.present(&tokens, self.config.plurals);
        if !objs.contains(&true) {
            return;
        }
        let attrs = self.attributes.present(&tokens, self.config.plurals);
        for (a, _) in attrs.iter().enumerate().filter(|(_, h)| **h) {
            for (o, _) in objs.iter().enumerate().filter(|(_, h)| **h) {
                counts.increment(a, o);
            }
        }
    }

    fn empty_counts(&self) -> CountMatrix {
        CountMatrix::zeros(self.attributes.targets, self.objects.targets)
    }
}

/// Extracts the caption from one TSV record (without its line terminator).
pub fn parse_record(line: &[u8]) -> std::result::Result<&str, String> {
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let text = std::str::from_utf8(line).map_err(|e| format!("invalid UTF-8: {e}"))?;
    let mut cols = text.split('\t');
    let id = cols.next().unwrap_or_default();
    let caption = cols.next().ok_or_else(|| "missing caption column".to_string())?;
    let _url = cols.next();
    if cols.next().is_some() {
        return Err("more than three columns".into());
    }
    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    Ok(caption)
}

#[derive(Default)]
struct Tally {
    records: usize,
    malformed: Vec<Error>,
}

fn count_lines<'a>(
    lines: impl Iterator<Item = &'a [u8]>,
    first_line: usize,
    matcher: &CaptionMatcher,
    counts: &mut CountMatrix,
    tally: &mut Tally,
) {
    for (i, line) in lines.enumerate() {
        if line.is_empty() || line == b"\r" {
            continue;
        }
        match parse_record(line) {
            Ok(caption) => {
                tally.records += 1;
                matcher.count_caption(caption, counts);
            }
            Err(reason) => tally.malformed.push(Error::CorpusFormat {
                line: first_line + i,
                reason,
            }),
        }
    }
}

fn finish(mut counts: CountMatrix, tally: Tally, cfg: MatchConfig) -> CooccurrenceCounts {
    if cfg.smoothing == Smoothing::AddOne {
        counts.data.iter_mut().for_each(|c| *c += 1);
    }
    if !tally.malformed.is_empty() {
        log::warn!("skipped {} malformed corpus record(s)", tally.malformed.len());
    }
    CooccurrenceCounts {
        phi_db: counts,
        records: tally.records,
        malformed: tally.malformed,
    }
}

/// Single streaming pass over a reader.
pub fn count_cooccurrences<R: BufRead>(mut reader: R, vocab: &Vocabulary, cfg: MatchConfig) -> Result<CooccurrenceCounts> {
    let matcher = CaptionMatcher::new(vocab, cfg);
    let mut counts = matcher.empty_counts();
    let mut tally = Tally::default();
    let mut buf = Vec::new();
    let mut line_no = 1;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<corpus>", e))?;
        if n == 0 {
            break;
        }
        let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
        count_lines(std::iter::once(line), line_no, &matcher, &mut counts, &mut tally);
        line_no += 1;
    }
    Ok(finish(counts, tally, cfg))
}

/// Splits `bytes` into at most `shards` pieces that end on line boundaries.
fn shard_bounds(bytes: &[u8], shards: usize) -> Vec<(usize, usize)> {
    let shards = shards.max(1);
    let target = bytes.len().div_ceil(shards).max(1);
    let mut bounds = Vec::with_capacity(shards);
    let mut start = 0;
    while start < bytes.len() {
        let mut end = (start + target).min(bytes.len());
        while end < bytes.len() && bytes[end - 1] != b'\n' {
            end += 1;
        }
        bounds.push((start, end));
        start = end;
    }
    bounds
}

/// Counts an in-memory corpus split into byte-range shards processed in
/// parallel. Partial matrices are merged by addition, so the result is the
/// same for any shard count.
pub fn count_cooccurrences_sharded(bytes: &[u8], vocab: &Vocabulary, cfg: MatchConfig, shards: usize) -> Result<CooccurrenceCounts> {
    let matcher = CaptionMatcher::new(vocab, cfg);
    let bounds = shard_bounds(bytes, shards);
    let line_offsets: Vec<usize> = {
        let newlines: Vec<usize> = bounds
            .par_iter()
            .map(|&(s, e)| bytes[s..e].iter().filter(|&&b| b == b'\n').count())
            .collect();
        let mut acc = 1;
        newlines
            .iter()
            .map(|n| {
                let first = acc;
                acc += n;
                first
            })
            .collect()
    };
    let partials: Vec<(CountMatrix, Tally)> = bounds
        .par_iter()
        .zip(line_offsets.par_iter())
        .map(|(&(s, e), &first_line)| {
            let mut counts = matcher.empty_counts();
            let mut tally = Tally::default();
            let chunk = &bytes[s..e];
            let chunk = chunk.strip_suffix(b"\n").unwrap_or(chunk);
            count_lines(chunk.split(|&b| b == b'\n'), first_line, &matcher, &mut counts, &mut tally);
            (counts, tally)
        })
        .collect();
    let mut counts = matcher.empty_counts();
    let mut tally = Tally::default();
    for (c, t) in partials {
        counts.add(&c);
        tally.records += t.records;
        tally.malformed.extend(t.malformed);
    }
    Ok(finish(counts, tally, cfg))
}

/// Reads a corpus file and counts it with `shards` parallel shards.
pub fn count_file(path: &Path, vocab: &Vocabulary, cfg: MatchConfig, shards: usize) -> Result<CooccurrenceCounts> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    count_cooccurrences_sharded(&bytes, vocab, cfg, shards)
}
