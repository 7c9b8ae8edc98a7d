//! Score variance across sampling seeds and across query forms.

use super::records::{ScoreKind, ScoreRecord};
use crate::stats::sample_variance;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceScope {
    /// Same (relation, form, entity, context), different seeds.
    Seeds,
    /// Same (relation, entity, context, seed), different forms of one class.
    Forms,
}

/// Grouping key. `form` holds the query form for the seed scope and the
/// form class for the form scope; `seed` is set only for the form scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarianceKey {
    pub scope: VarianceScope,
    pub kind: ScoreKind,
    pub relation: String,
    pub form: String,
    pub entity_id: String,
    pub context_id: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub scope: VarianceScope,
    pub kind: ScoreKind,
    pub relation: String,
    pub form: String,
    pub entity_id: String,
    pub context_id: Option<String>,
    pub seed: Option<u64>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReliabilityReport {
    pub rows: Vec<VarianceRow>,
    /// Keys with a single score, for which no variance exists.
    pub skipped: Vec<VarianceKey>,
}

impl ReliabilityReport {
    pub fn max_variance(&self, scope: VarianceScope, kind: ScoreKind) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.scope == scope && r.kind == kind)
            .map(|r| r.variance)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }
}

pub fn key_of(scope: VarianceScope, r: &ScoreRecord) -> VarianceKey {
    VarianceKey {
        scope,
        kind: r.kind,
        relation: r.relation.clone(),
        form: match scope {
            VarianceScope::Seeds => r.query_form.as_str().to_string(),
            VarianceScope::Forms => r.query_form.class().to_string(),
        },
        entity_id: r.entity_id.clone(),
        context_id: r.context_id.clone(),
        seed: match scope {
            VarianceScope::Seeds => None,
            VarianceScope::Forms => Some(r.seed),
        },
    }
}

/// Sample variances (n − 1) per key for both scopes. Under each scope every
/// score record falls into exactly one key, listed either in `rows` or in
/// `skipped`.
pub fn reliability_report(records: &[ScoreRecord]) -> ReliabilityReport {
    let mut report = ReliabilityReport::default();
    for scope in [VarianceScope::Seeds, VarianceScope::Forms] {
        let mut groups: BTreeMap<VarianceKey, Vec<f64>> = BTreeMap::new();
        for r in records {
            groups.entry(key_of(scope, r)).or_default().push(r.value);
        }
        for (key, values) in groups {
            match sample_variance(&values) {
                Some(variance) => report.rows.push(VarianceRow {
                    n: values.len(),
                    mean: values.iter().sum::<f64>() / values.len() as f64,
                    variance,
                    scope: key.scope,
                    kind: key.kind,
                    relation: key.relation,
                    form: key.form,
                    entity_id: key.entity_id,
                    context_id: key.context_id,
                    seed: key.seed,
                }),
                None => report.skipped.push(key),
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::QueryForm;
    use crate::info_metrics::PriorMode;
    use approx::assert_abs_diff_eq;

    fn sus(form: QueryForm, entity: &str, seed: u64, value: f64) -> ScoreRecord {
        ScoreRecord {
            model_id: "m".into(),
            relation: "r".into(),
            query_form: form,
            entity_id: entity.into(),
            context_id: None,
            kind: ScoreKind::Susceptibility,
            value,
            seed,
            prior_mode: PriorMode::Marginal,
            context_type: None,
            relevant: None,
            is_real: Some(true),
        }
    }

    #[test]
    fn seed_variance_and_partition() {
        let rs = vec![
            sus(QueryForm::OpenQa, "a", 0, 0.1),
            sus(QueryForm::OpenQa, "a", 1, 0.3),
            sus(QueryForm::OpenQa, "b", 0, 0.5),
            sus(QueryForm::OpenQa, "b", 1, 0.5),
            sus(QueryForm::Closed1, "c", 0, 0.2),
        ];
        let rep = reliability_report(&rs);
        let seeds: Vec<_> = rep.rows.iter().filter(|r| r.scope == VarianceScope::Seeds).collect();
        assert_eq!(seeds.len(), 2);
        assert_abs_diff_eq!(seeds[0].variance, 0.02, epsilon = 1e-15);
        assert_eq!(seeds[1].variance, 0.0);

        for scope in [VarianceScope::Seeds, VarianceScope::Forms] {
            let mut from_records: Vec<VarianceKey> = rs.iter().map(|r| key_of(scope, r)).collect();
            from_records.sort();
            from_records.dedup();
            let mut reported: Vec<VarianceKey> = rep
                .rows
                .iter()
                .filter(|r| r.scope == scope)
                .map(|r| VarianceKey {
                    scope: r.scope,
                    kind: r.kind,
                    relation: r.relation.clone(),
                    form: r.form.clone(),
                    entity_id: r.entity_id.clone(),
                    context_id: r.context_id.clone(),
                    seed: r.seed,
                })
                .chain(rep.skipped.iter().filter(|k| k.scope == scope).cloned())
                .collect();
            reported.sort();
            let n = reported.len();
            reported.dedup();
            assert_eq!(n, reported.len());
            assert_eq!(reported, from_records);
        }
    }

    #[test]
    fn form_variance_within_class() {
        let rs = vec![
            sus(QueryForm::OpenQa, "a", 0, 0.1),
            sus(QueryForm::OpenCompletion, "a", 0, 0.3),
            sus(QueryForm::Closed1, "a", 0, 1.0),
        ];
        let rep = reliability_report(&rs);
        let forms: Vec<_> = rep.rows.iter().filter(|r| r.scope == VarianceScope::Forms).collect();
        assert_eq!(forms.len(), 1);
        assert_eq!(forms[0].form, "open");
        assert_abs_diff_eq!(forms[0].variance, 0.02, epsilon = 1e-15);
    }
}
