//! The four per-(relation, form) hypothesis tests with BH correction.
//!
//! Families are (hypothesis, open/closed, seed): the correction runs across
//! relations within one family.

use super::records::{ScoreKind, ScoreRecord};
use crate::dataset::{ContextType, QueryForm};
use crate::stats::{bh_correct, derive_seed, permutation_test, Tail};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Persuasion: contexts mentioning the queried entity vs. the rest.
    Relevance,
    /// Persuasion: assertive vs. base contexts.
    Assertive,
    /// Persuasion: negation vs. base contexts (two-sided).
    Negation,
    /// Susceptibility: fake vs. real entities.
    Familiarity,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 4] = [Hypothesis::Relevance, Hypothesis::Assertive, Hypothesis::Negation, Hypothesis::Familiarity];

    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::Relevance => "relevance",
            Hypothesis::Assertive => "assertive",
            Hypothesis::Negation => "negation",
            Hypothesis::Familiarity => "familiarity",
        }
    }

    pub fn tail(self) -> Tail {
        match self {
            Hypothesis::Negation => Tail::TwoSided,
            _ => Tail::Greater,
        }
    }

    /// Splits the group's records into the `a` and `b` samples.
    fn samples(self, records: &[&ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in records {
            let side = match (self, r.kind) {
                (Hypothesis::Relevance, ScoreKind::Persuasion) => r.relevant,
                (Hypothesis::Assertive, ScoreKind::Persuasion) => match r.context_type {
                    Some(ContextType::Assertive) => Some(true),
                    Some(ContextType::Base) => Some(false),
                    _ => None,
                },
                (Hypothesis::Negation, ScoreKind::Persuasion) => match r.context_type {
                    Some(ContextType::Negation) => Some(true),
                    Some(ContextType::Base) => Some(false),
                    _ => None,
                },
                (Hypothesis::Familiarity, ScoreKind::Susceptibility) => r.is_real.map(|real| !real),
                _ => None,
            };
            match side {
                Some(true) => a.push(r.value),
                Some(false) => b.push(r.value),
                None => {}
            }
        }
        (a, b)
    }
}

/// One row of `tests.csv`. Statistic columns are empty for skipped tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub hypothesis: Hypothesis,
    pub relation: String,
    pub query_form: QueryForm,
    pub form_class: String,
    pub seed: u64,
    pub tail: Tail,
    pub n_a: usize,
    pub n_b: usize,
    pub statistic: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub effect_size: Option<f64>,
    pub reject: Option<bool>,
    pub k: usize,
    pub test_seed: u64,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub permutations: usize,
    pub alpha: f64,
    pub master_seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { permutations: 10_000, alpha: 0.05, master_seed: 0 }
    }
}

/// Runs every hypothesis on every (relation, form, seed) group present in
/// `records` and applies BH within each (hypothesis, form class, seed)
/// family. Rows are ordered by hypothesis, relation, form, seed.
pub fn hypothesis_suite(records: &[ScoreRecord], opts: SuiteOptions) -> crate::stats::Result<Vec<TestRow>> {
    let mut groups: BTreeMap<(String, QueryForm, u64), Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| matches!(r.kind, ScoreKind::Persuasion | ScoreKind::Susceptibility)) {
        groups.entry((r.relation.clone(), r.query_form, r.seed)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for h in Hypothesis::ALL {
        for ((relation, form, seed), recs) in &groups {
            let label = format!("{}\u{0}{relation}\u{0}{}\u{0}{seed}", h.as_str(), form.as_str());
            let test_seed = derive_seed(opts.master_seed, &label);
            let (a, b) = h.samples(recs);
            let mut row = TestRow {
                hypothesis: h,
                relation: relation.clone(),
                query_form: *form,
                form_class: form.class().to_string(),
                seed: *seed,
                tail: h.tail(),
                n_a: a.len(),
                n_b: b.len(),
                statistic: None,
                p_raw: None,
                p_adjusted: None,
                effect_size: None,
                reject: None,
                k: opts.permutations,
                test_seed,
                skipped: None,
            };
            match permutation_test(&a, &b, h.tail(), opts.permutations, test_seed) {
                Ok(t) => {
                    row.statistic = Some(t.statistic);
                    row.p_raw = Some(t.p_raw);
                    row.effect_size = Some(t.effect_size);
                }
                Err(e) => row.skipped = Some(e.to_string()),
            }
            rows.push(row);
        }
    }

    let mut families: BTreeMap<(Hypothesis, String, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.p_raw.is_some() {
            families.entry((r.hypothesis, r.form_class.clone(), r.seed)).or_default().push(i);
        }
    }
    for idx in families.values() {
        let p: Vec<f64> = idx.iter().map(|&i| rows[i].p_raw.expect("tested")).collect();
        let (adj, rej) = bh_correct(&p, opts.alpha)?;
        for ((&i, a), r) in idx.iter().zip(adj).zip(rej) {
            rows[i].p_adjusted = Some(a);
            rows[i].reject = Some(r);
        }
    }
    Ok(rows)
}
