//! Experiment-grid construction: templates, entities, constrained context
//! sampling and prompt enumeration.

use crate::prob_model::{Prompt, DEFAULT_SEPARATOR};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

/// Rendering attempts per context slot before sampling gives up.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },
    #[error("relation `{relation}`: {message}")]
    InvalidSpec { relation: String, message: String },
    #[error("entity `{0}`: {1}")]
    InvalidEntity(String, String),
    #[error("infeasible sampling: {0}")]
    Infeasible(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    Base,
    Assertive,
    Negation,
}

impl ContextType {
    pub const ALL: [ContextType; 3] = [ContextType::Base, ContextType::Assertive, ContextType::Negation];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextType::Base => "base",
            ContextType::Assertive => "assertive",
            ContextType::Negation => "negation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryForm {
    OpenQa,
    OpenCompletion,
    #[serde(rename = "closed_1")]
    Closed1,
    #[serde(rename = "closed_2")]
    Closed2,
}

impl QueryForm {
    pub const ALL: [QueryForm; 4] = [QueryForm::OpenQa, QueryForm::OpenCompletion, QueryForm::Closed1, QueryForm::Closed2];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryForm::OpenQa => "open_qa",
            QueryForm::OpenCompletion => "open_completion",
            QueryForm::Closed1 => "closed_1",
            QueryForm::Closed2 => "closed_2",
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, QueryForm::OpenQa | QueryForm::OpenCompletion)
    }

    /// "open" or "closed".
    pub fn class(self) -> &'static str {
        if self.is_open() {
            "open"
        } else {
            "closed"
        }
    }
}

impl std::str::FromStr for QueryForm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        QueryForm::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| format!("unknown query form `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplates {
    pub open: Vec<String>,
    pub closed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTemplates {
    pub base: Vec<String>,
    pub assertive: Vec<String>,
    pub negation: Vec<String>,
}

impl ContextTemplates {
    pub fn of(&self, t: ContextType) -> &[String] {
        match t {
            ContextType::Base => &self.base,
            ContextType::Assertive => &self.assertive,
            ContextType::Negation => &self.negation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub relation_id: String,
    pub query_templates: QueryTemplates,
    pub context_templates: ContextTemplates,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub surface: String,
    pub is_real: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(rename = "class", default)]
    pub entity_class: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextInstance {
    pub context_id: String,
    pub text: String,
    pub context_type: ContextType,
    pub mentioned_entity_id: String,
    pub mentioned_answer: String,
}

impl ContextInstance {
    /// A context is relevant to queries about the entity it mentions.
    pub fn is_relevant_to(&self, entity_id: &str) -> bool {
        self.mentioned_entity_id == entity_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub query_id: String,
    pub text: String,
    pub form: QueryForm,
    pub entity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Placeholders of the form `{name}` in order of appearance.
pub fn template_slots(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Substitutes every `{name}` in `template` from `values`. Fails on a slot
/// without a value; values are inserted verbatim.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            return Err(DatasetError::Template { template: template.into(), message: "unclosed `{`".into() });
        };
        let name = &after[..close];
        let value = values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| DatasetError::Template {
            template: template.into(),
            message: format!("no value for slot `{name}`"),
        })?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn require_slots(template: &str, required: &[&str], relation: &str) -> Result<()> {
    let slots = template_slots(template);
    for r in required {
        let n = slots.iter().filter(|s| *s == r).count();
        if n != 1 {
            return Err(DatasetError::InvalidSpec {
                relation: relation.into(),
                message: format!("template `{template}` must contain {{{r}}} exactly once (found {n})"),
            });
        }
    }
    if let Some(extra) = slots.iter().find(|s| !required.contains(s)) {
        return Err(DatasetError::InvalidSpec {
            relation: relation.into(),
            message: format!("template `{template}` has unknown slot {{{extra}}}"),
        });
    }
    Ok(())
}

impl RelationSpec {
    pub fn validate(&self) -> Result<()> {
        let rel = self.relation_id.as_str();
        let bad = |m: &str| Err(DatasetError::InvalidSpec { relation: rel.into(), message: m.into() });
        if rel.is_empty() {
            return bad("empty relation_id");
        }
        if self.query_templates.open.len() < 2 || self.query_templates.closed.len() < 2 {
            return bad("need at least two open and two closed query templates");
        }
        for t in &self.query_templates.open {
            require_slots(t, &["entity"], rel)?;
        }
        for t in &self.query_templates.closed {
            require_slots(t, &["entity", "answer"], rel)?;
        }
        for ty in ContextType::ALL {
            let list = self.context_templates.of(ty);
            if list.is_empty() {
                return bad(&format!("no {} context templates", ty.as_str()));
            }
            for t in list {
                require_slots(t, &["entity", "answer"], rel)?;
            }
        }
        if self.answers.is_empty() {
            return bad("empty answer space");
        }
        Ok(())
    }

    /// The template used for each query form: the first two open templates
    /// are the QA and completion forms, the first two closed ones the
    /// closed forms.
    pub fn query_template(&self, form: QueryForm) -> &str {
        match form {
            QueryForm::OpenQa => &self.query_templates.open[0],
            QueryForm::OpenCompletion => &self.query_templates.open[1],
            QueryForm::Closed1 => &self.query_templates.closed[0],
            QueryForm::Closed2 => &self.query_templates.closed[1],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = read_json(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let io = |m: String| DatasetError::Io { path: path.display().to_string(), message: m };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| io(e.to_string()))
}

pub fn load_entities(path: impl AsRef<Path>) -> Result<Vec<EntityRecord>> {
    let entities: Vec<EntityRecord> = read_json(path.as_ref())?;
    validate_entities(&entities)?;
    Ok(entities)
}

pub fn validate_entities(entities: &[EntityRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entities {
        if e.surface.trim().is_empty() {
            return Err(DatasetError::InvalidEntity(e.id.clone(), "empty surface form".into()));
        }
        if !seen.insert(e.id.as_str()) {
            return Err(DatasetError::InvalidEntity(e.id.clone(), "duplicate id".into()));
        }
    }
    Ok(())
}

/// Drops fake entities whose surface form appears in `excluded` (terms found
/// in the training corpus).
pub fn filter_fake_entities(entities: Vec<EntityRecord>, excluded: &HashSet<String>) -> Vec<EntityRecord> {
    entities
        .into_iter()
        .filter(|e| {
            let drop = !e.is_real && excluded.contains(&e.surface);
            if drop {
                log::info!("excluding fake entity `{}` found in corpus", e.surface);
            }
            !drop
        })
        .collect()
}

fn stable_index(label: &str, n: usize) -> usize {
    let digest = Sha256::digest(label.as_bytes());
    (u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % n as u64) as usize
}

/// The answer slotted into closed queries: the gold answer, or for entities
/// without one a fixed answer chosen by hashing the entity id.
pub fn closed_query_answer<'a>(spec: &'a RelationSpec, entity: &'a EntityRecord) -> Result<&'a str> {
    match (&entity.gold_answer, entity.is_real) {
        (Some(g), _) => Ok(g),
        (None, true) => Err(DatasetError::InvalidEntity(entity.id.clone(), "real entity needs a gold_answer".into())),
        (None, false) => Ok(&spec.answers[stable_index(&format!("{}\u{0}{}", spec.relation_id, entity.id), spec.answers.len())]),
    }
}

/// Renders one query form for one entity.
pub fn render_query(template: &str, form: QueryForm, entity: &EntityRecord, answer: Option<&str>) -> Result<QueryInstance> {
    let mut values = vec![("entity", entity.surface.as_str())];
    if let Some(a) = answer {
        values.push(("answer", a));
    }
    let text = render_template(template, &values)?;
    let uses_answer = template_slots(template).contains(&"answer");
    Ok(QueryInstance {
        query_id: format!("{}:{}", form.as_str(), entity.id),
        text,
        form,
        entity_id: entity.id.clone(),
        answer: if uses_answer { answer.map(str::to_string) } else { None },
    })
}

/// Content-derived id, so the same rendered context gets the same id under
/// every seed.
pub fn context_id_for(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("c{}", hex::encode(&digest[..8]))
}

/// Samples `n_total` contexts so that every entity is mentioned in exactly
/// `per_entity` of them, `per_entity / 3` of each type. Rendered strings are
/// unique across the sample.
pub fn sample_contexts(
    spec: &RelationSpec,
    entities: &[EntityRecord],
    n_total: usize,
    per_entity: usize,
    seed: u64,
) -> Result<Vec<ContextInstance>> {
    if entities.is_empty() {
        return Err(DatasetError::Infeasible("no entities".into()));
    }
    if per_entity == 0 || per_entity % 3 != 0 {
        return Err(DatasetError::Infeasible(format!("per_entity = {per_entity} is not a positive multiple of 3")));
    }
    if n_total != per_entity * entities.len() {
        return Err(DatasetError::Infeasible(format!(
            "n_total = {n_total} but {per_entity} contexts for each of {} entities makes {}",
            entities.len(),
            per_entity * entities.len()
        )));
    }
    let per_type = per_entity / 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<String> = HashSet::with_capacity(n_total);
    let mut out = Vec::with_capacity(n_total);
    for entity in entities {
        for ty in ContextType::ALL {
            let templates = spec.context_templates.of(ty);
            for _ in 0..per_type {
                let mut placed = false;
                for _ in 0..MAX_RESAMPLES {
                    let template = &templates[rng.random_range(0..templates.len())];
                    let answer = &spec.answers[rng.random_range(0..spec.answers.len())];
                    let text = render_template(template, &[("entity", &entity.surface), ("answer", answer)])?;
                    if seen.insert(text.clone()) {
                        out.push(ContextInstance {
                            context_id: context_id_for(&text),
                            text,
                            context_type: ty,
                            mentioned_entity_id: entity.id.clone(),
                            mentioned_answer: answer.clone(),
                        });
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(DatasetError::Infeasible(format!(
                        "could not render a new {} context for `{}` after {MAX_RESAMPLES} attempts",
                        ty.as_str(),
                        entity.id
                    )));
                }
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Per-entity, per-type context counts.
pub fn census(contexts: &[ContextInstance]) -> BTreeMap<(String, ContextType), usize> {
    let mut counts = BTreeMap::new();
    for c in contexts {
        *counts.entry((c.mentioned_entity_id.clone(), c.context_type)).or_insert(0) += 1;
    }
    counts
}

/// Everything needed to score one relation under one sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub relation_id: String,
    pub seed: u64,
    pub separator: String,
    pub forms: Vec<QueryForm>,
    pub entities: Vec<EntityRecord>,
    pub queries: Vec<QueryInstance>,
    pub contexts: Vec<ContextInstance>,
}

/// Prompts for one (form, entity) query: the bare query and the query
/// behind every sampled context.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPromptSet<'a> {
    pub query: &'a QueryInstance,
    pub bare: Prompt,
    pub with_context: Vec<(&'a ContextInstance, Prompt)>,
}

impl ExperimentGrid {
    pub fn query_prompts<'a>(&'a self, query: &'a QueryInstance) -> QueryPromptSet<'a> {
        let qid = format!("{}/{}", self.relation_id, query.query_id);
        QueryPromptSet {
            query,
            bare: Prompt::bare(&query.text, &qid, &query.entity_id),
            with_context: self
                .contexts
                .iter()
                .map(|c| (c, Prompt::with_context(&c.context_id, &c.text, &self.separator, &query.text, &qid, &query.entity_id)))
                .collect(),
        }
    }

    /// All prompts, grouped by form then entity: bare query first, then one
    /// per context in sample order.
    pub fn prompts(&self) -> Vec<Prompt> {
        let mut out = Vec::with_capacity(self.prompt_count());
        for q in &self.queries {
            let set = self.query_prompts(q);
            out.push(set.bare);
            out.extend(set.with_context.into_iter().map(|(_, p)| p));
        }
        out
    }

    pub fn prompt_count(&self) -> usize {
        self.queries.len() * (1 + self.contexts.len())
    }

    /// Contexts mentioning `entity_id`, and the rest.
    pub fn partition_by_relevance(&self, entity_id: &str) -> (Vec<&ContextInstance>, Vec<&ContextInstance>) {
        self.contexts.iter().partition(|c| c.is_relevant_to(entity_id))
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Options for [`build_grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridOptions {
    pub per_entity: usize,
    pub forms: Vec<QueryForm>,
    pub separator: String,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { per_entity: 6, forms: QueryForm::ALL.to_vec(), separator: DEFAULT_SEPARATOR.into() }
    }
}

pub fn build_grid(spec: &RelationSpec, entities: &[EntityRecord], seed: u64, opts: &GridOptions) -> Result<ExperimentGrid> {
    spec.validate()?;
    validate_entities(entities)?;
    let contexts = sample_contexts(spec, entities, opts.per_entity * entities.len(), opts.per_entity, seed)?;
    let mut queries = Vec::with_capacity(opts.forms.len() * entities.len());
    for &form in &opts.forms {
        let template = spec.query_template(form);
        for e in entities {
            let answer = if form.is_open() { None } else { Some(closed_query_answer(spec, e)?) };
            queries.push(render_query(template, form, e, answer)?);
        }
    }
    Ok(ExperimentGrid {
        relation_id: spec.relation_id.clone(),
        seed,
        separator: opts.separator.clone(),
        forms: opts.forms.clone(),
        entities: entities.to_vec(),
        queries,
        contexts,
    })
}

/// Union of answer spaces across relations, in first-seen order.
pub fn answer_vocabulary<'a>(specs: impl IntoIterator<Item = &'a RelationSpec>) -> Vec<String> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for s in specs {
        for a in &s.answers {
            if seen.insert(a.clone(), ()).is_none() {
                out.push(a.clone());
            }
        }
    }
    out
}
