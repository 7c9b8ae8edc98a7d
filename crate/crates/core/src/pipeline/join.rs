//! Joins susceptibility scores with corpus counts, graph degrees and
//! memorization ratios, and summarizes their relationship.

use super::records::{MrRow, ScoreKind, ScoreRecord};
use super::{PipelineError, Result};
use crate::corpus::CoocCount;
use crate::dataset::{EntityRecord, QueryForm};
use crate::kg::DegreeRecord;
use crate::stats::spearman;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

pub const MR_BINS: usize = 5;

#[derive(Debug, Clone, Default)]
pub struct JoinInputs<'a> {
    pub scores: &'a [ScoreRecord],
    pub cooc: &'a [CoocCount],
    pub degrees: &'a [DegreeRecord],
    pub mr: &'a [MrRow],
    /// Maps entity ids to surface forms and gold answers for matching
    /// count and degree rows that use surface strings.
    pub entities: &'a [EntityRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedRow {
    pub relation: String,
    pub query_form: QueryForm,
    pub entity_id: String,
    pub seed: u64,
    pub susceptibility: f64,
    pub cooc_count: Option<u64>,
    pub degree: Option<u64>,
    pub mr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrBin {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub mean_susceptibility: Option<f64>,
    pub max_susceptibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinOutput {
    pub rows: Vec<JoinedRow>,
    /// Spearman ρ of susceptibility against ln(1 + count).
    pub rho_count: Correlation,
    /// Spearman ρ of susceptibility against ln(1 + degree).
    pub rho_degree: Correlation,
    pub mr_bins: Vec<MrBin>,
}

fn correlation(pairs: impl Iterator<Item = (f64, f64)>) -> Correlation {
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.unzip();
    Correlation { n: x.len(), rho: spearman(&x, &y).ok() }
}

/// Bin index for an MR value in [0, 1]; 1.0 lands in the last bin.
pub fn mr_bin(mr: f64) -> usize {
    ((mr * MR_BINS as f64).floor() as usize).min(MR_BINS - 1)
}

/// Left-joins susceptibility records on entity.
///
/// Count rows match by entity id or surface form; when an entity has rows
/// for several answers, the row for its gold answer wins, else the largest
/// count. Degree rows match (entity, relation) first, then entity alone
/// when the degree table holds a single relation. MR rows match
/// (relation, form, entity, seed).
pub fn analysis_join(inputs: &JoinInputs<'_>) -> Result<JoinOutput> {
    let sus: Vec<&ScoreRecord> = inputs.scores.iter().filter(|r| r.kind == ScoreKind::Susceptibility).collect();
    if sus.is_empty() {
        return Err(PipelineError::EmptyJoin("no susceptibility records".into()));
    }
    let by_id: HashMap<&str, &EntityRecord> = inputs.entities.iter().map(|e| (e.id.as_str(), e)).collect();
    let names = |id: &str| -> Vec<String> {
        let mut v = vec![id.to_string()];
        if let Some(e) = by_id.get(id) {
            v.push(e.surface.clone());
        }
        v
    };

    let mut cooc_by_entity: HashMap<&str, Vec<&CoocCount>> = HashMap::new();
    for c in inputs.cooc {
        cooc_by_entity.entry(c.entity.as_str()).or_default().push(c);
    }
    let count_for = |id: &str| -> Option<u64> {
        let gold = by_id.get(id).and_then(|e| e.gold_answer.as_deref());
        let rows: Vec<&CoocCount> = names(id).iter().flat_map(|n| cooc_by_entity.get(n.as_str()).cloned().unwrap_or_default()).collect();
        if let Some(g) = gold {
            if let Some(r) = rows.iter().find(|r| r.answer == g) {
                return Some(r.count);
            }
        }
        rows.iter().map(|r| r.count).max()
    };

    let relations: BTreeSet<&str> = inputs.degrees.iter().map(|d| d.relation.as_str()).collect();
    let single_relation = relations.len() == 1;
    let degree_for = |id: &str, relation: &str| -> Option<u64> {
        let names = names(id);
        let exact = inputs.degrees.iter().find(|d| d.relation == relation && names.contains(&d.entity));
        exact
            .or_else(|| single_relation.then(|| inputs.degrees.iter().find(|d| names.contains(&d.entity))).flatten())
            .map(|d| d.degree)
    };

    let mr: HashMap<(&str, QueryForm, &str, u64), Option<f64>> = inputs
        .mr
        .iter()
        .map(|m| ((m.relation.as_str(), m.query_form, m.entity_id.as_str(), m.seed), m.mr))
        .collect();

    let rows: Vec<JoinedRow> = sus
        .iter()
        .map(|r| JoinedRow {
            relation: r.relation.clone(),
            query_form: r.query_form,
            entity_id: r.entity_id.clone(),
            seed: r.seed,
            susceptibility: r.value,
            cooc_count: count_for(&r.entity_id),
            degree: degree_for(&r.entity_id, &r.relation),
            mr: mr.get(&(r.relation.as_str(), r.query_form, r.entity_id.as_str(), r.seed)).copied().flatten(),
        })
        .collect();

    let matched = rows.iter().any(|r| r.cooc_count.is_some() || r.degree.is_some() || r.mr.is_some());
    if !matched && !(inputs.cooc.is_empty() && inputs.degrees.is_empty() && inputs.mr.is_empty()) {
        return Err(PipelineError::EmptyJoin("no score row matched any count, degree or MR row".into()));
    }

    let rho_count = correlation(rows.iter().filter_map(|r| r.cooc_count.map(|c| (r.susceptibility, (1.0 + c as f64).ln()))));
    let rho_degree = correlation(rows.iter().filter_map(|r| r.degree.map(|d| (r.susceptibility, (1.0 + d as f64).ln()))));

    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); MR_BINS];
    for r in &rows {
        if let Some(m) = r.mr {
            bins[mr_bin(m)].push(r.susceptibility);
        }
    }
    let mr_bins = bins
        .into_iter()
        .enumerate()
        .map(|(i, v)| MrBin {
            lower: i as f64 / MR_BINS as f64,
            upper: (i + 1) as f64 / MR_BINS as f64,
            n: v.len(),
            mean_susceptibility: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
            max_susceptibility: v.iter().copied().reduce(f64::max),
        })
        .collect();

    Ok(JoinOutput { rows, rho_count, rho_degree, mr_bins })
}
