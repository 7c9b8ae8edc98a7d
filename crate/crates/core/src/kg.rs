//! Relation-dependent entity degrees over a triple store.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `subject<TAB>predicate<TAB>object`, got {got:?}")]
    Malformed { line: usize, got: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Self {
        Self { subject: subject.into(), predicate: predicate.into(), object: object.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeRecord {
    pub entity: String,
    pub relation: String,
    pub degree: u64,
}

/// Neighbor sets keyed by `(entity, predicate)`; a triple `(s, p, o)` adds
/// `o` to `(s, p)` and `s` to `(o, p)`.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    neighbors: HashMap<(String, String), HashSet<String>>,
    n_triples: usize,
}

impl KnowledgeGraph {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut g = Self::default();
        for t in triples {
            g.insert(t);
        }
        g
    }

    pub fn insert(&mut self, t: &Triple) {
        self.n_triples += 1;
        self.neighbors
            .entry((t.subject.clone(), t.predicate.clone()))
            .or_default()
            .insert(t.object.clone());
        self.neighbors
            .entry((t.object.clone(), t.predicate.clone()))
            .or_default()
            .insert(t.subject.clone());
    }

    /// Triples inserted, duplicates included.
    pub fn triples_seen(&self) -> usize {
        self.n_triples
    }

    /// Distinct outgoing objects unioned with distinct incoming subjects.
    pub fn degree(&self, entity: &str, relation: &str) -> u64 {
        self.neighbors
            .get(&(entity.to_string(), relation.to_string()))
            .map_or(0, |s| s.len() as u64)
    }

    pub fn degrees<S: AsRef<str>>(&self, entities: &[S], relation: &str) -> Vec<DegreeRecord> {
        entities
            .iter()
            .map(|e| DegreeRecord {
                entity: e.as_ref().to_string(),
                relation: relation.to_string(),
                degree: self.degree(e.as_ref(), relation),
            })
            .collect()
    }

    /// Loads a UTF-8 TSV file of triples. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn load_tsv(path: &Path) -> Result<Self, KgError> {
        let io = |e: std::io::Error| KgError::Io { path: path.display().to_string(), message: e.to_string() };
        let file = std::fs::File::open(path).map_err(io)?;
        let mut g = Self::default();
        for t in parse_tsv(std::io::BufReader::new(file)) {
            g.insert(&t?);
        }
        Ok(g)
    }
}

pub fn parse_tsv<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Triple, KgError>> {
    reader.lines().enumerate().filter_map(|(n, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(KgError::Io { path: "<triples>".into(), message: e.to_string() })),
        };
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            return None;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        match fields[..] {
            [s, p, o] if !s.is_empty() && !p.is_empty() && !o.is_empty() => Some(Ok(Triple::new(s, p, o))),
            _ => Some(Err(KgError::Malformed { line: n + 1, got: trimmed.to_string() })),
        }
    })
}

pub fn write_degrees_csv<W: std::io::Write>(out: W, rows: &[DegreeRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
