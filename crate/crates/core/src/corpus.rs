//! Entity and entity–answer co-occurrence counts over a text corpus.
//!
//! Documents are tokenized by deleting ASCII punctuation and splitting on
//! whitespace. A co-occurrence is a pair of match start positions `(i, j)`
//! of the entity and answer phrases in the same document with
//! `|i - j| <= window`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus shard {path}: {message}")]
    Shard { path: String, message: String },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("phrase `{0}` is empty after tokenization")]
    EmptyPhrase(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: u64,
    pub tokens: Vec<String>,
}

/// Deletes ASCII punctuation and splits on Unicode whitespace. Case is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn tokenize_doc(doc_id: u64, text: &str) -> TokenizedDoc {
    TokenizedDoc { doc_id, tokens: tokenize(text) }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhrasePair {
    pub entity: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoocCount {
    pub entity: String,
    pub answer: String,
    pub window: usize,
    pub count: u64,
    pub entity_freq: u64,
    pub answer_freq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanOptions {
    pub window: usize,
    pub case_insensitive: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, case_insensitive: false }
    }
}

/// Compiled phrase set: phrases are token sequences indexed by first token.
struct Matcher {
    phrases: Vec<Vec<String>>,
    by_first: HashMap<String, Vec<usize>>,
    /// (entity phrase, answer phrase) per input pair.
    pairs: Vec<(usize, usize)>,
    case_insensitive: bool,
}

impl Matcher {
    fn new(pairs: &[PhrasePair], case_insensitive: bool) -> Result<Self> {
        let mut phrases: Vec<Vec<String>> = Vec::new();
        let mut index: HashMap<Vec<String>, usize> = HashMap::new();
        let mut intern = |raw: &str| -> Result<usize> {
            let mut toks = tokenize(raw);
            if case_insensitive {
                toks = toks.into_iter().map(|t| t.to_lowercase()).collect();
            }
            if toks.is_empty() {
                return Err(CorpusError::EmptyPhrase(raw.to_string()));
            }
            Ok(*index.entry(toks.clone()).or_insert_with(|| {
                phrases.push(toks);
                phrases.len() - 1
            }))
        };
        let pair_ids = pairs
            .iter()
            .map(|p| Ok((intern(&p.entity)?, intern(&p.answer)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, p) in phrases.iter().enumerate() {
            by_first.entry(p[0].clone()).or_default().push(i);
        }
        Ok(Self { phrases, by_first, pairs: pair_ids, case_insensitive })
    }

    /// Start positions of every phrase occurring in `tokens`.
    fn positions(&self, tokens: &[String]) -> HashMap<usize, Vec<usize>> {
        let folded: Vec<String>;
        let toks: &[String] = if self.case_insensitive {
            folded = tokens.iter().map(|t| t.to_lowercase()).collect();
            &folded
        } else {
            tokens
        };
        let mut out: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, t) in toks.iter().enumerate() {
            if let Some(cands) = self.by_first.get(t) {
                for &pid in cands {
                    let p = &self.phrases[pid];
                    if toks.len() - i >= p.len() && toks[i..i + p.len()] == p[..] {
                        out.entry(pid).or_default().push(i);
                    }
                }
            }
        }
        out
    }
}

/// Pairs `(i, j)` from sorted start lists with `|i - j| <= window`;
/// `i == j` is skipped when both lists come from the same phrase.
fn count_pairs(a: &[usize], b: &[usize], window: usize, same_phrase: bool) -> u64 {
    let mut total = 0u64;
    let (mut lo, mut hi) = (0usize, 0usize);
    for &i in a {
        let from = i.saturating_sub(window);
        let to = i + window;
        while lo < b.len() && b[lo] < from {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < b.len() && b[hi] <= to {
            hi += 1;
        }
        total += (hi - lo) as u64;
        if same_phrase {
            total -= 1;
        }
    }
    total
}

/// Per-pair accumulator: (co-occurrences, entity matches, answer matches).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Tally(Vec<[u64; 3]>);

impl Tally {
    fn zeros(n: usize) -> Self {
        Tally(vec![[0; 3]; n])
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self
    }
}

fn tally_doc(m: &Matcher, tokens: &[String], window: usize, tally: &mut Tally) {
    let pos = m.positions(tokens);
    if pos.is_empty() {
        return;
    }
    let empty = Vec::new();
    for (k, &(e, a)) in m.pairs.iter().enumerate() {
        let pe = pos.get(&e).unwrap_or(&empty);
        let pa = pos.get(&a).unwrap_or(&empty);
        tally.0[k][1] += pe.len() as u64;
        tally.0[k][2] += pa.len() as u64;
        if !pe.is_empty() && !pa.is_empty() {
            tally.0[k][0] += count_pairs(pe, pa, window, e == a);
        }
    }
}

fn finish(pairs: &[PhrasePair], window: usize, tally: Tally) -> Vec<CoocCount> {
    pairs
        .iter()
        .zip(tally.0)
        .map(|(p, [count, ef, af])| CoocCount {
            entity: p.entity.clone(),
            answer: p.answer.clone(),
            window,
            count,
            entity_freq: ef,
            answer_freq: af,
        })
        .collect()
}

/// Counts co-occurrences over in-memory documents.
pub fn count_cooccurrences(docs: &[TokenizedDoc], pairs: &[PhrasePair], opts: ScanOptions) -> Result<Vec<CoocCount>> {
    if opts.window == 0 {
        return Err(CorpusError::ZeroWindow);
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let m = Matcher::new(pairs, opts.case_insensitive)?;
    let mut tally = Tally::zeros(pairs.len());
    for d in docs {
        tally_doc(&m, &d.tokens, opts.window, &mut tally);
    }
    Ok(finish(pairs, opts.window, tally))
}

fn shard_err(path: &Path, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Shard { path: path.display().to_string(), message: e.to_string() }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl") | Some("json") | Some("ndjson"))
}

/// Streams documents from one corpus file: one document per line, or one
/// JSON object with a `text` field per line for `.jsonl` files.
fn read_docs(path: &Path) -> Result<impl Iterator<Item = Result<String>> + '_> {
    let file = File::open(path).map_err(|e| shard_err(path, e))?;
    let jsonl = is_jsonl(path);
    Ok(BufReader::new(file).lines().enumerate().filter_map(move |(n, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(shard_err(path, format!("line {}: {e}", n + 1)))),
        };
        if !jsonl {
            return Some(Ok(line));
        }
        if line.trim().is_empty() {
            return None;
        }
        #[derive(Deserialize)]
        struct Doc {
            text: String,
        }
        Some(serde_json::from_str::<Doc>(&line).map(|d| d.text).map_err(|e| shard_err(path, format!("line {}: {e}", n + 1))))
    }))
}

/// Scans corpus files with `shards` worker threads and merges the per-worker
/// counts by summation.
pub fn scan(corpus: &[PathBuf], pairs: &[PhrasePair], opts: ScanOptions, shards: usize) -> Result<Vec<CoocCount>> {
    if opts.window == 0 {
        return Err(CorpusError::ZeroWindow);
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    // Fail early, naming the first unreadable file.
    for p in corpus {
        File::open(p).map_err(|e| shard_err(p, e))?;
    }
    let m = Matcher::new(pairs, opts.case_insensitive)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(shards.max(1))
        .build()
        .map_err(|e| CorpusError::Input { path: "<thread pool>".into(), message: e.to_string() })?;
    let n = pairs.len();
    let tally = pool.install(|| -> Result<Tally> {
        let mut total = Tally::zeros(n);
        for path in corpus {
            let docs = read_docs(path)?;
            let part = docs
                .par_bridge()
                .try_fold(
                    || Tally::zeros(n),
                    |mut acc, doc| {
                        let doc = doc?;
                        tally_doc(&m, &tokenize(&doc), opts.window, &mut acc);
                        Ok::<_, CorpusError>(acc)
                    },
                )
                .try_reduce(|| Tally::zeros(n), |a, b| Ok(a.merge(b)))?;
            total = total.merge(part);
        }
        Ok(total)
    })?;
    Ok(finish(pairs, opts.window, tally))
}

/// Named-entity annotation counts for one term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerStats {
    pub term: String,
    pub total_count: u64,
    pub entity_labeled_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NerRule {
    pub min_freq: u64,
    pub max_nonentity_share: f64,
}

impl Default for NerRule {
    fn default() -> Self {
        Self { min_freq: 50, max_nonentity_share: 0.75 }
    }
}

/// Terms that are frequent yet mostly not tagged as entities.
///
/// A term is excluded iff `total_count > min_freq` and its non-entity share
/// exceeds `max_nonentity_share`. When `candidates` is given, only those
/// terms are considered.
pub fn apply_ner_exclusion(candidates: Option<&HashSet<String>>, ner: &[NerStats], rule: NerRule) -> Vec<String> {
    let mut out: Vec<String> = ner
        .iter()
        .filter(|s| candidates.is_none_or(|c| c.contains(&s.term)))
        .filter(|s| {
            s.total_count > rule.min_freq && {
                let labeled = s.entity_labeled_count.min(s.total_count) as f64;
                1.0 - labeled / s.total_count as f64 > rule.max_nonentity_share
            }
        })
        .map(|s| s.term.clone())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn csv_input_err(path: &Path, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Input { path: path.display().to_string(), message: e.to_string() }
}

/// Reads `entity,answer` rows (header required).
pub fn read_pairs_csv(path: &Path) -> Result<Vec<PhrasePair>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_input_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_input_err(path, e))).collect()
}

/// Reads `term,total_count,entity_labeled_count` rows (header required).
pub fn read_ner_csv(path: &Path) -> Result<Vec<NerStats>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_input_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_input_err(path, e))).collect()
}

/// Writes `entity,answer,window,count,entity_freq,answer_freq` rows.
pub fn write_counts_csv<W: std::io::Write>(out: W, counts: &[CoocCount]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in counts {
        w.serialize(c)?;
    }
    w.flush()
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<CoocCount>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_input_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_input_err(path, e))).collect()
}
