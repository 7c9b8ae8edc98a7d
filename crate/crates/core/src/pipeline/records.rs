//! Row types written to and read from the output tables.

use crate::dataset::{ContextType, QueryForm};
use crate::info_metrics::PriorMode;
use serde::{Deserialize, Serialize};

/// Entity id used by records that average over entities.
pub const ALL_ENTITIES: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Persuasion,
    Susceptibility,
    EntityIndependentPersuasion,
    EntityIndependentSusceptibility,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Persuasion => "persuasion",
            ScoreKind::Susceptibility => "susceptibility",
            ScoreKind::EntityIndependentPersuasion => "entity_independent_persuasion",
            ScoreKind::EntityIndependentSusceptibility => "entity_independent_susceptibility",
        }
    }

    /// Whether records of this kind are keyed by a context.
    pub fn has_context(self) -> bool {
        matches!(self, ScoreKind::Persuasion | ScoreKind::EntityIndependentPersuasion)
    }
}

/// One row of `scores.csv`.
///
/// `context_type` and `relevant` describe the context of persuasion
/// records; `is_real` describes the entity. All three are empty where they
/// do not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model_id: String,
    pub relation: String,
    pub query_form: QueryForm,
    pub entity_id: String,
    pub context_id: Option<String>,
    pub kind: ScoreKind,
    pub value: f64,
    pub seed: u64,
    pub prior_mode: PriorMode,
    pub context_type: Option<ContextType>,
    pub relevant: Option<bool>,
    pub is_real: Option<bool>,
}

/// Per-entity memorization ratio for one (relation, form, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrRow {
    pub model_id: String,
    pub relation: String,
    pub query_form: QueryForm,
    pub entity_id: String,
    pub seed: u64,
    pub p_o: usize,
    pub p_s: usize,
    pub n_other: usize,
    /// Empty when no generation matched either answer.
    pub mr: Option<f64>,
}
