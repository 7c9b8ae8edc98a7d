//! Fixed-context experiments: a hand-written set of queries, entities with
//! group labels, and named context collections. Each (query, entity,
//! collection) gets a susceptibility score; groups are compared per
//! collection with a two-sided permutation test.

use super::config::ProviderSpec;
use super::{create_dir, write_csv, write_json, PipelineError, Result};
use crate::dataset::{context_id_for, render_template, EntityRecord};
use crate::info_metrics::{susceptibility_score, ConditionalTable};
use crate::prob_model::{
    batch_get, AnswerDistributionProvider, CachedProvider, DistributionCache, Prompt, RemoteProvider, ReplayProvider,
    SyntheticModelSpec, SyntheticParams, SyntheticProvider, DEFAULT_SEPARATOR,
};
use crate::stats::{bh_correct, derive_seed, permutation_test, Tail};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppEntity {
    pub id: String,
    pub group: String,
    /// Slot values, e.g. `{"entity": "Mary"}` or `{"entity1": .., "entity2": ..}`.
    pub slots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplicationConfig {
    pub name: String,
    pub description: String,
    pub provider: ProviderSpec,
    pub cache: Option<PathBuf>,
    /// Answer space of the synthetic provider; ignored by the others.
    pub answers: Vec<String>,
    /// Per-group familiarity for the synthetic provider.
    pub group_beta: BTreeMap<String, f64>,
    pub queries: Vec<String>,
    pub entities: Vec<AppEntity>,
    /// Named context collections; templates may use the entity slots.
    pub context_sets: BTreeMap<String, Vec<String>>,
    pub separator: String,
    pub permutations: usize,
    pub alpha: f64,
    pub test_seed: u64,
    pub max_in_flight: usize,
    pub out_dir: PathBuf,
}

impl Default for ApplicationConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            description: String::new(),
            provider: ProviderSpec::default(),
            cache: None,
            answers: Vec::new(),
            group_beta: BTreeMap::new(),
            queries: Vec::new(),
            entities: Vec::new(),
            context_sets: BTreeMap::new(),
            separator: DEFAULT_SEPARATOR.into(),
            permutations: 10_000,
            alpha: 0.05,
            test_seed: 0,
            max_in_flight: 8,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ApplicationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.cache.as_mut(), Some(&mut cfg.out_dir)].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.queries.is_empty() || self.entities.is_empty() || self.context_sets.is_empty() {
            return bad("queries, entities and context_sets must be non-empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || self.permutations == 0 {
            return bad("alpha must lie in (0, 1) and permutations must be positive".into());
        }
        let mut ids = HashSet::new();
        for e in &self.entities {
            if !ids.insert(&e.id) {
                return bad(format!("duplicate entity id `{}`", e.id));
            }
        }
        for (name, set) in &self.context_sets {
            if set.is_empty() {
                return bad(format!("context set `{name}` is empty"));
            }
        }
        if matches!(self.provider, ProviderSpec::Synthetic(_)) && self.answers.is_empty() {
            return bad("the synthetic provider needs `answers`".into());
        }
        if matches!(self.provider, ProviderSpec::Replay(_)) && self.cache.is_none() {
            return bad("the replay provider needs a cache file".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppScoreRow {
    pub query_id: String,
    pub query: String,
    pub entity_id: String,
    pub group: String,
    pub context_set: String,
    pub susceptibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppTestRow {
    pub context_set: String,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub statistic: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub effect_size: Option<f64>,
    pub reject: Option<bool>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationOutput {
    pub scores: Vec<AppScoreRow>,
    pub tests: Vec<AppTestRow>,
}

fn slot_values(e: &AppEntity) -> Vec<(&str, &str)> {
    e.slots.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

fn provider_for(cfg: &ApplicationConfig) -> Result<Arc<dyn AnswerDistributionProvider>> {
    let cache = match (&cfg.cache, &cfg.provider) {
        (None, _) => None,
        (Some(p), ProviderSpec::Replay(_)) => Some(Arc::new(DistributionCache::load(p)?)),
        (Some(p), _) => Some(Arc::new(DistributionCache::open(p)?)),
    };
    let base: Arc<dyn AnswerDistributionProvider> = match &cfg.provider {
        ProviderSpec::Synthetic(params) => {
            let mut params: SyntheticParams = params.clone();
            let records: Vec<EntityRecord> = cfg
                .entities
                .iter()
                .map(|e| {
                    if let Some(&b) = cfg.group_beta.get(&e.group) {
                        params.beta_overrides.entry(e.id.clone()).or_insert(b);
                    }
                    EntityRecord {
                        id: e.id.clone(),
                        surface: e.slots.values().cloned().collect::<Vec<_>>().join(" / "),
                        is_real: true,
                        gold_answer: None,
                        entity_class: e.group.clone(),
                    }
                })
                .collect();
            Arc::new(SyntheticProvider::new(SyntheticModelSpec::from_dataset(&params, cfg.answers.clone(), &records, &[])?))
        }
        ProviderSpec::Remote(rc) => Arc::new(RemoteProvider::connect(rc.clone())?),
        ProviderSpec::Replay(rs) => {
            let c = cache.clone().expect("validated: replay has a cache");
            return Ok(Arc::new(ReplayProvider::new(c, &rs.source_provider_id, &rs.model_id)));
        }
    };
    Ok(match cache {
        Some(c) => Arc::new(CachedProvider::new(base, c)),
        None => base,
    })
}

/// Scores every (query, entity, context set) and compares groups.
pub fn run_application(cfg: &ApplicationConfig) -> Result<ApplicationOutput> {
    cfg.validate()?;
    let provider = provider_for(cfg)?;

    struct Unit<'a> {
        qi: usize,
        query_text: String,
        entity: &'a AppEntity,
        set: &'a str,
        contexts: Vec<(String, String)>,
    }
    let mut units = Vec::new();
    for (qi, q) in cfg.queries.iter().enumerate() {
        for e in &cfg.entities {
            let values = slot_values(e);
            let query_text = render_template(q, &values)?;
            for (set, templates) in &cfg.context_sets {
                let mut seen = HashSet::new();
                let mut contexts = Vec::new();
                for t in templates {
                    let text = render_template(t, &values)?;
                    if seen.insert(text.clone()) {
                        contexts.push((context_id_for(&text), text));
                    }
                }
                units.push(Unit { qi, query_text: query_text.clone(), entity: e, set, contexts });
            }
        }
    }

    let mut prompts = Vec::new();
    for u in &units {
        let qid = format!("{}/q{:02}", cfg.name, u.qi);
        for (cid, text) in &u.contexts {
            prompts.push(Prompt::with_context(cid, text, &cfg.separator, &u.query_text, &qid, &u.entity.id));
        }
    }
    let dists = batch_get(provider.as_ref(), &prompts, cfg.max_in_flight)?;

    let mut scores = Vec::with_capacity(units.len());
    let mut offset = 0;
    for u in &units {
        let rows = u
            .contexts
            .iter()
            .zip(&dists[offset..offset + u.contexts.len()])
            .map(|((cid, _), d)| (cid.clone(), d.clone()))
            .collect();
        offset += u.contexts.len();
        let table = ConditionalTable::uniform(rows)?;
        scores.push(AppScoreRow {
            query_id: format!("q{:02}", u.qi),
            query: cfg.queries[u.qi].clone(),
            entity_id: u.entity.id.clone(),
            group: u.entity.group.clone(),
            context_set: u.set.to_string(),
            susceptibility: susceptibility_score(&table),
        });
    }

    let groups: Vec<String> = cfg.entities.iter().map(|e| e.group.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut tests = Vec::new();
    if groups.len() == 2 {
        for set in cfg.context_sets.keys() {
            let pick = |g: &str| -> Vec<f64> {
                scores.iter().filter(|s| &s.context_set == set && s.group == g).map(|s| s.susceptibility).collect()
            };
            let (a, b) = (pick(&groups[0]), pick(&groups[1]));
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let seed = derive_seed(cfg.test_seed, &format!("{}\u{0}{set}", cfg.name));
            let mut row = AppTestRow {
                context_set: set.clone(),
                group_a: groups[0].clone(),
                group_b: groups[1].clone(),
                n_a: a.len(),
                n_b: b.len(),
                mean_a: mean(&a),
                mean_b: mean(&b),
                statistic: None,
                p_raw: None,
                p_adjusted: None,
                effect_size: None,
                reject: None,
                skipped: None,
            };
            match permutation_test(&a, &b, Tail::TwoSided, cfg.permutations, seed) {
                Ok(t) => {
                    row.statistic = Some(t.statistic);
                    row.p_raw = Some(t.p_raw);
                    row.effect_size = Some(t.effect_size);
                }
                Err(e) => row.skipped = Some(e.to_string()),
            }
            tests.push(row);
        }
        let tested: Vec<usize> = (0..tests.len()).filter(|&i| tests[i].p_raw.is_some()).collect();
        let p: Vec<f64> = tested.iter().map(|&i| tests[i].p_raw.expect("tested")).collect();
        let (adj, rej) = bh_correct(&p, cfg.alpha)?;
        for ((&i, a), r) in tested.iter().zip(adj).zip(rej) {
            tests[i].p_adjusted = Some(a);
            tests[i].reject = Some(r);
        }
    } else {
        log::info!("{} groups; group comparison needs exactly two", groups.len());
    }
    Ok(ApplicationOutput { scores, tests })
}

/// Writes `app_scores.csv` and `app_tests.csv` under the config's out dir.
pub fn run_application_to_dir(cfg: &ApplicationConfig) -> Result<ApplicationOutput> {
    let out = run_application(cfg)?;
    create_dir(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join("app_scores.csv"), &out.scores)?;
    write_csv(&cfg.out_dir.join("app_tests.csv"), &out.tests)?;
    write_json(
        &cfg.out_dir.join("app_meta.json"),
        &serde_json::json!({ "name": cfg.name, "version": super::experiment::version_string(), "n_scores": out.scores.len() }),
    )?;
    Ok(out)
}
