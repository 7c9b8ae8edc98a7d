//! Scoring runs: grids in, score records out.

use super::config::{ExperimentConfig, ProviderSpec};
use super::records::{MrRow, ScoreKind, ScoreRecord, ALL_ENTITIES};
use super::{create_dir, io_err, write_csv, write_json, PipelineError, Result};
use crate::dataset::{
    build_grid, filter_fake_entities, load_entities, validate_entities, ContextType, EntityRecord, ExperimentGrid,
    GridOptions, RelationSpec,
};
use crate::info_metrics::{
    entity_independent_persuasion, entity_independent_susceptibility, persuasion_score, resolve_prior,
    susceptibility_score, AnswerDistribution, ConditionalTable, PriorMode,
};
use crate::prob_model::{
    batch_get, AnswerDistributionProvider, CachedProvider, DistributionCache, ProviderError, RemoteProvider,
    ReplayProvider, SyntheticModelSpec, SyntheticProvider,
};
use crate::stats::{classify_answer, memorization_ratio, AgreementLabel, MatchConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

pub type SharedProvider = Arc<dyn AnswerDistributionProvider>;

/// A relation spec with its (filtered) entity list.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRelation {
    pub spec: RelationSpec,
    pub entities: Vec<EntityRecord>,
}

fn read_term_list(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(list.into_iter().collect());
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

pub fn load_relations(cfg: &ExperimentConfig) -> Result<Vec<LoadedRelation>> {
    let excluded = cfg.exclude.as_deref().map(read_term_list).transpose()?.unwrap_or_default();
    let mut out: Vec<LoadedRelation> = Vec::with_capacity(cfg.relations.len());
    for r in &cfg.relations {
        let spec = RelationSpec::load(&r.spec)?;
        spec.validate()?;
        let entities = filter_fake_entities(load_entities(&r.entities)?, &excluded);
        validate_entities(&entities)?;
        if out.iter().any(|o| o.spec.relation_id == spec.relation_id) {
            return Err(PipelineError::Config(format!("relation `{}` listed twice", spec.relation_id)));
        }
        if let Some(n) = cfg.n_contexts {
            if n != cfg.per_entity * entities.len() {
                return Err(crate::dataset::DatasetError::Infeasible(format!(
                    "relation `{}`: n_contexts = {n} but per_entity × entities = {}",
                    spec.relation_id,
                    cfg.per_entity * entities.len()
                ))
                .into());
            }
        }
        out.push(LoadedRelation { spec, entities });
    }
    Ok(out)
}

fn grid_options(cfg: &ExperimentConfig) -> GridOptions {
    GridOptions { per_entity: cfg.per_entity, forms: cfg.forms.clone(), separator: cfg.separator.clone() }
}

/// Builds every (relation, seed) grid.
pub fn build_dataset(cfg: &ExperimentConfig, relations: &[LoadedRelation]) -> Result<Vec<ExperimentGrid>> {
    let opts = grid_options(cfg);
    let mut grids = Vec::with_capacity(relations.len() * cfg.seeds.len());
    for r in relations {
        for &seed in &cfg.seeds {
            grids.push(build_grid(&r.spec, &r.entities, seed, &opts)?);
        }
    }
    Ok(grids)
}

fn open_cache(cfg: &ExperimentConfig) -> Result<Option<Arc<DistributionCache>>> {
    match (&cfg.cache, &cfg.provider) {
        (None, _) => Ok(None),
        (Some(p), ProviderSpec::Replay(_)) => Ok(Some(Arc::new(DistributionCache::load(p)?))),
        (Some(p), _) => Ok(Some(Arc::new(DistributionCache::open(p)?))),
    }
}

fn wrap(inner: SharedProvider, cache: &Option<Arc<DistributionCache>>) -> SharedProvider {
    match cache {
        Some(c) => Arc::new(CachedProvider::new(inner, c.clone())),
        None => inner,
    }
}

/// One provider per relation. The synthetic provider is derived from each
/// relation's answers, entities and the union of contexts over all grids.
fn make_providers(
    cfg: &ExperimentConfig,
    relations: &[LoadedRelation],
    grids: &[ExperimentGrid],
) -> Result<Vec<SharedProvider>> {
    let cache = open_cache(cfg)?;
    match &cfg.provider {
        ProviderSpec::Synthetic(params) => relations
            .iter()
            .map(|r| {
                let mut contexts = Vec::new();
                let mut seen = HashSet::new();
                for g in grids.iter().filter(|g| g.relation_id == r.spec.relation_id) {
                    for c in &g.contexts {
                        if seen.insert(c.context_id.clone()) {
                            contexts.push(c.clone());
                        }
                    }
                }
                let spec = SyntheticModelSpec::from_dataset(params, r.spec.answers.clone(), &r.entities, &contexts)?;
                Ok(wrap(Arc::new(SyntheticProvider::new(spec)), &cache))
            })
            .collect(),
        ProviderSpec::Remote(rc) => {
            let remote: SharedProvider = Arc::new(RemoteProvider::connect(rc.clone())?);
            let shared = wrap(remote, &cache);
            Ok(relations.iter().map(|_| shared.clone()).collect())
        }
        ProviderSpec::Replay(rs) => {
            let cache = cache.expect("validated: replay has a cache");
            let replay: SharedProvider = Arc::new(ReplayProvider::new(cache, &rs.source_provider_id, &rs.model_id));
            Ok(relations.iter().map(|_| replay.clone()).collect())
        }
    }
}

/// Metadata written next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config_hash: String,
    pub provider_id: String,
    pub model_id: String,
    pub separator: String,
    pub prior_mode: PriorMode,
    pub prior_floor: f64,
    pub seeds: Vec<u64>,
    pub relations: Vec<String>,
    pub n_records: usize,
    pub complete: bool,
    pub error: Option<String>,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutput {
    pub records: Vec<ScoreRecord>,
    pub mr: Vec<MrRow>,
    pub meta: RunMeta,
}

struct QueryScores {
    form_index: usize,
    entity_id: String,
    table: ConditionalTable,
    prior: AnswerDistribution,
}

fn score_grid(
    cfg: &ExperimentConfig,
    grid: &ExperimentGrid,
    provider: &dyn AnswerDistributionProvider,
    records: &mut Vec<ScoreRecord>,
) -> Result<()> {
    let prompts = grid.prompts();
    let dists = batch_get(provider, &prompts, cfg.max_in_flight)?;
    let n = 1 + grid.contexts.len();
    let model_id = provider.model_id().to_string();
    let real: BTreeMap<&str, bool> = grid.entities.iter().map(|e| (e.id.as_str(), e.is_real)).collect();
    let record = |form, entity: &str, context: Option<&crate::dataset::ContextInstance>, kind, value| ScoreRecord {
        model_id: model_id.clone(),
        relation: grid.relation_id.clone(),
        query_form: form,
        entity_id: entity.to_string(),
        context_id: context.map(|c| c.context_id.clone()),
        kind,
        value,
        seed: grid.seed,
        prior_mode: cfg.prior_mode,
        context_type: context.map(|c| c.context_type),
        relevant: context.filter(|_| entity != ALL_ENTITIES).map(|c| c.is_relevant_to(entity)),
        is_real: real.get(entity).copied(),
    };

    let mut per_query = Vec::with_capacity(grid.queries.len());
    for (qi, q) in grid.queries.iter().enumerate() {
        let chunk = &dists[qi * n..(qi + 1) * n];
        let rows = grid.contexts.iter().zip(&chunk[1..]).map(|(c, d)| (c.context_id.clone(), d.clone())).collect();
        let table = ConditionalTable::uniform(rows)?;
        let prior = resolve_prior(cfg.prior_mode, &table, Some(&chunk[0]), cfg.prior_floor)?;
        records.push(record(q.form, &q.entity_id, None, ScoreKind::Susceptibility, susceptibility_score(&table)));
        for (c, row) in grid.contexts.iter().zip(table.rows()) {
            records.push(record(q.form, &q.entity_id, Some(c), ScoreKind::Persuasion, persuasion_score(&row.dist, &prior)?));
        }
        let form_index = grid.forms.iter().position(|f| *f == q.form).expect("query form is in the grid");
        per_query.push(QueryScores { form_index, entity_id: q.entity_id.clone(), table, prior });
    }

    for (fi, &form) in grid.forms.iter().enumerate() {
        let of_form: Vec<&QueryScores> = per_query.iter().filter(|s| s.form_index == fi).collect();
        if of_form.is_empty() {
            continue;
        }
        for (ci, c) in grid.contexts.iter().enumerate() {
            let pairs: BTreeMap<String, (AnswerDistribution, AnswerDistribution)> = of_form
                .iter()
                .map(|s| (s.entity_id.clone(), (s.table.rows()[ci].dist.clone(), s.prior.clone())))
                .collect();
            let v = entity_independent_persuasion(&pairs, None)?;
            records.push(record(form, ALL_ENTITIES, Some(c), ScoreKind::EntityIndependentPersuasion, v));
        }
        let tables: BTreeMap<String, ConditionalTable> =
            of_form.iter().map(|s| (s.entity_id.clone(), s.table.clone())).collect();
        let v = entity_independent_susceptibility(&tables, None)?;
        records.push(record(form, ALL_ENTITIES, None, ScoreKind::EntityIndependentSusceptibility, v));
    }
    Ok(())
}

/// Memorization ratios from greedy generations behind base and assertive
/// contexts that mention the queried entity and assert a different answer
/// than the original one. The original answer is the gold answer, or the
/// generation for the bare query when there is none.
fn memorization_rows(
    cfg: &ExperimentConfig,
    grid: &ExperimentGrid,
    provider: &dyn AnswerDistributionProvider,
    out: &mut Vec<MrRow>,
) -> Result<()> {
    let norm = MatchConfig::default();
    for q in grid.queries.iter().filter(|q| q.form.is_open()) {
        let set = grid.query_prompts(q);
        let entity = grid.entity(&q.entity_id).expect("query entity is in the grid");
        let original = match &entity.gold_answer {
            Some(g) => g.clone(),
            None => provider.generate(&set.bare, cfg.max_new_tokens)?,
        };
        let mut labels = Vec::new();
        for (c, prompt) in &set.with_context {
            let conflicting = c.is_relevant_to(&q.entity_id)
                && matches!(c.context_type, ContextType::Base | ContextType::Assertive)
                && norm.normalize(&c.mentioned_answer) != norm.normalize(&original);
            if !conflicting {
                continue;
            }
            let generated = provider.generate(prompt, cfg.max_new_tokens)?;
            labels.push(classify_answer(&generated, &c.mentioned_answer, &original));
        }
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        out.push(MrRow {
            model_id: provider.model_id().to_string(),
            relation: grid.relation_id.clone(),
            query_form: q.form,
            entity_id: q.entity_id.clone(),
            seed: grid.seed,
            p_o: count(AgreementLabel::Original),
            p_s: count(AgreementLabel::Context),
            n_other: count(AgreementLabel::Other),
            mr: memorization_ratio(&labels).ok().map(|m| m.value),
        });
    }
    Ok(())
}

/// Results so far plus the error that stopped the run, if any.
pub struct PartialRun {
    pub output: ScoreOutput,
    pub error: Option<PipelineError>,
}

fn meta_for(cfg: &ExperimentConfig, relations: &[LoadedRelation], provider: Option<&SharedProvider>) -> RunMeta {
    RunMeta {
        version: version_string(),
        config_hash: cfg.hash(),
        provider_id: provider.map(|p| p.provider_id().to_string()).unwrap_or_default(),
        model_id: provider.map(|p| p.model_id().to_string()).unwrap_or_default(),
        separator: cfg.separator.clone(),
        prior_mode: cfg.prior_mode,
        prior_floor: cfg.prior_floor,
        seeds: cfg.seeds.clone(),
        relations: relations.iter().map(|r| r.spec.relation_id.clone()).collect(),
        n_records: 0,
        complete: false,
        error: None,
    }
}

/// Scores every grid. Provider failures stop the run but keep the records
/// of the grids finished before the failure.
pub fn run_experiment_partial(cfg: &ExperimentConfig) -> Result<PartialRun> {
    cfg.validate()?;
    let relations = load_relations(cfg)?;
    let grids = build_dataset(cfg, &relations)?;
    let providers = make_providers(cfg, &relations, &grids)?;
    let mut meta = meta_for(cfg, &relations, providers.first());
    let mut records = Vec::new();
    let mut mr = Vec::new();
    let mut error = None;
    for grid in &grids {
        let ri = relations.iter().position(|r| r.spec.relation_id == grid.relation_id).expect("grid relation");
        let provider = providers[ri].as_ref();
        let mut grid_records = Vec::new();
        let step = score_grid(cfg, grid, provider, &mut grid_records).and_then(|_| {
            if !cfg.generate_answers {
                return Ok(());
            }
            match memorization_rows(cfg, grid, provider, &mut mr) {
                Err(PipelineError::Provider(ProviderError::GenerationUnsupported(p))) => {
                    log::warn!("provider `{p}` cannot generate; skipping memorization ratios");
                    Ok(())
                }
                other => other,
            }
        });
        match step {
            Ok(()) => records.extend(grid_records),
            Err(e) => {
                log::error!("relation `{}` seed {}: {e}", grid.relation_id, grid.seed);
                error = Some(e);
                break;
            }
        }
    }
    meta.n_records = records.len();
    meta.complete = error.is_none();
    meta.error = error.as_ref().map(|e| e.to_string());
    Ok(PartialRun { output: ScoreOutput { records, mr, meta }, error })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ScoreOutput> {
    let run = run_experiment_partial(cfg)?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.output),
    }
}

/// Writes `scores.csv`, `mr.csv` (when generating) and `run_meta.json`
/// under `cfg.out_dir`; on a provider failure the partial tables are
/// written before the error is returned.
pub fn score_to_dir(cfg: &ExperimentConfig) -> Result<ScoreOutput> {
    let run = run_experiment_partial(cfg)?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    write_csv(&dir.join("scores.csv"), &run.output.records)?;
    if cfg.generate_answers {
        write_csv(&dir.join("mr.csv"), &run.output.mr)?;
    }
    write_json(&dir.join("run_meta.json"), &run.output.meta)?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.output),
    }
}

/// Serialized form of a grid for `build-dataset`.
#[derive(Debug, Serialize)]
pub struct GridSummary<'a> {
    pub relation_id: &'a str,
    pub seed: u64,
    pub n_prompts: usize,
    pub grid: &'a ExperimentGrid,
}

pub fn write_dataset(cfg: &ExperimentConfig, grids: &[ExperimentGrid]) -> Result<Vec<std::path::PathBuf>> {
    let dir = cfg.out_dir.join("dataset");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for g in grids {
        let path = dir.join(format!("{}_seed{}.json", g.relation_id, g.seed));
        write_json(&path, &GridSummary { relation_id: &g.relation_id, seed: g.seed, n_prompts: g.prompt_count(), grid: g })?;
        let prompts_path = dir.join(format!("{}_seed{}_prompts.jsonl", g.relation_id, g.seed));
        let mut text = String::new();
        for p in g.prompts() {
            text.push_str(&serde_json::to_string(&p).map_err(|e| io_err(&prompts_path, e))?);
            text.push('\n');
        }
        std::fs::write(&prompts_path, text).map_err(|e| io_err(&prompts_path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Convenience for callers holding a single provider.
pub fn score_grid_with(
    cfg: &ExperimentConfig,
    grid: &ExperimentGrid,
    provider: &dyn AnswerDistributionProvider,
) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    score_grid(cfg, grid, provider, &mut out)?;
    Ok(out)
}

