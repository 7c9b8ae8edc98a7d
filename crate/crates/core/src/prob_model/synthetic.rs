//! A closed-form stand-in for a language model.
//!
//! For an entity with familiarity `beta`, prior `prior` and a context with
//! pull distribution `pull`, the answer distribution is
//!
//! ```text
//! p(a) ∝ exp(beta · ln prior(a) + g · ln pull(a))
//! ```
//!
//! where `g = 1` when the context mentions the queried entity and
//! `g = irrelevant_scale` otherwise. Bare queries drop the pull term.
//! `beta = 0` returns the pull; `beta = ∞` returns a point mass on the
//! prior's mode regardless of context.

use super::{AnswerDistributionProvider, Prompt, ProviderError, Result};
use crate::dataset::{ContextInstance, ContextType, EntityRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntity {
    pub beta: f64,
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticContext {
    pub pull: Vec<f64>,
    pub mentioned_entity: Option<String>,
}

/// Knobs for deriving a synthetic model from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub model_id: String,
    pub model_seed: u64,
    pub beta_real: f64,
    pub beta_fake: f64,
    /// Per-entity overrides of beta.
    pub beta_overrides: HashMap<String, f64>,
    /// Prior mass on the entity's preferred answer.
    pub prior_peak: f64,
    /// Mass the context puts on its mentioned answer, per context type.
    pub pull_base: f64,
    pub pull_assertive: f64,
    /// Relative weight of the mentioned answer in a negation context.
    pub negation_weight: f64,
    pub irrelevant_scale: f64,
    /// Multiplicative noise amplitude on priors and pulls.
    pub jitter: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            model_id: "synthetic-v1".into(),
            model_seed: 0,
            beta_real: 2.0,
            beta_fake: 0.0,
            beta_overrides: HashMap::new(),
            prior_peak: 0.6,
            pull_base: 0.5,
            pull_assertive: 0.7,
            negation_weight: 0.2,
            irrelevant_scale: 0.3,
            jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub model_id: String,
    pub model_seed: u64,
    pub answers: Vec<String>,
    pub default_beta: f64,
    pub irrelevant_scale: f64,
    pub jitter: f64,
    pub entities: HashMap<String, SyntheticEntity>,
    pub contexts: HashMap<String, SyntheticContext>,
}

fn hashed_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn jittered(mut v: Vec<f64>, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if amplitude > 0.0 {
        for x in &mut v {
            *x *= (amplitude * rng.random_range(-1.0..=1.0)).exp();
        }
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

fn peaked(vocab: usize, peak: usize, mass: f64) -> Vec<f64> {
    let rest = if vocab > 1 { (1.0 - mass) / (vocab - 1) as f64 } else { 0.0 };
    (0..vocab).map(|i| if i == peak { mass } else { rest }).collect()
}

impl SyntheticModelSpec {
    pub fn new(model_id: &str, model_seed: u64, answers: Vec<String>) -> Self {
        Self {
            model_id: model_id.into(),
            model_seed,
            answers,
            default_beta: 0.0,
            irrelevant_scale: 1.0,
            jitter: 0.0,
            entities: HashMap::new(),
            contexts: HashMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.answers.len()
    }

    fn answer_index(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }

    /// Builds a model over `answers` with one entry per entity and context.
    ///
    /// Real entities prefer their gold answer; fake entities prefer an
    /// answer picked from a hash of their id. Base and assertive contexts
    /// pull towards the mentioned answer, negation contexts away from it.
    pub fn from_dataset(
        params: &SyntheticParams,
        answers: Vec<String>,
        entities: &[EntityRecord],
        contexts: &[ContextInstance],
    ) -> Result<Self> {
        if answers.is_empty() {
            return Err(ProviderError::Synthetic("empty answer vocabulary".into()));
        }
        let mut spec = Self::new(&params.model_id, params.model_seed, answers);
        spec.default_beta = params.beta_fake;
        spec.irrelevant_scale = params.irrelevant_scale;
        spec.jitter = params.jitter;
        let v = spec.vocab_size();
        for e in entities {
            let beta = params
                .beta_overrides
                .get(&e.id)
                .copied()
                .unwrap_or(if e.is_real { params.beta_real } else { params.beta_fake });
            let mut rng = hashed_rng(params.model_seed, &format!("entity\u{0}{}", e.id));
            let peak = e
                .gold_answer
                .as_deref()
                .and_then(|g| spec.answer_index(g))
                .unwrap_or_else(|| rng.random_range(0..v));
            let prior = jittered(peaked(v, peak, params.prior_peak), params.jitter, &mut rng);
            spec.entities.insert(e.id.clone(), SyntheticEntity { beta, prior });
        }
        for c in contexts {
            let mut rng = hashed_rng(params.model_seed, &format!("context\u{0}{}", c.context_id));
            let target = spec.answer_index(&c.mentioned_answer).unwrap_or_else(|| rng.random_range(0..v));
            let pull = match c.context_type {
                ContextType::Base => peaked(v, target, params.pull_base),
                ContextType::Assertive => peaked(v, target, params.pull_assertive),
                ContextType::Negation => {
                    (0..v).map(|i| if i == target { params.negation_weight } else { 1.0 }).collect()
                }
            };
            let pull = jittered(pull, params.jitter, &mut rng);
            spec.contexts
                .insert(c.context_id.clone(), SyntheticContext { pull, mentioned_entity: Some(c.mentioned_entity_id.clone()) });
        }
        Ok(spec)
    }

    fn entity(&self, id: &str) -> SyntheticEntity {
        self.entities.get(id).cloned().unwrap_or_else(|| {
            let mut rng = hashed_rng(self.model_seed, &format!("entity\u{0}{id}"));
            let v = self.vocab_size();
            let peak = rng.random_range(0..v);
            SyntheticEntity { beta: self.default_beta, prior: jittered(peaked(v, peak, 0.6), self.jitter, &mut rng) }
        })
    }

    fn context(&self, id: &str) -> SyntheticContext {
        self.contexts.get(id).cloned().unwrap_or_else(|| {
            let mut rng = hashed_rng(self.model_seed, &format!("context\u{0}{id}"));
            let v = self.vocab_size();
            let target = rng.random_range(0..v);
            SyntheticContext { pull: jittered(peaked(v, target, 0.5), self.jitter.max(0.5), &mut rng), mentioned_entity: None }
        })
    }

    /// Log-probabilities for `entity` with an optional context.
    pub fn log_distribution(&self, entity_id: &str, context_id: Option<&str>) -> Result<Vec<f64>> {
        let v = self.vocab_size();
        let entity = self.entity(entity_id);
        if entity.prior.len() != v {
            return Err(ProviderError::Synthetic(format!("prior of `{entity_id}` has wrong length")));
        }
        if entity.beta.is_infinite() && entity.beta > 0.0 {
            let max = entity.prior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let modes = entity.prior.iter().filter(|&&p| p == max).count() as f64;
            return Ok(entity.prior.iter().map(|&p| if p == max { -modes.ln() } else { f64::NEG_INFINITY }).collect());
        }
        if !(entity.beta >= 0.0) {
            return Err(ProviderError::Synthetic(format!("beta of `{entity_id}` must be >= 0")));
        }
        let mut logits = vec![0.0; v];
        if entity.beta > 0.0 {
            for (l, p) in logits.iter_mut().zip(&entity.prior) {
                *l += entity.beta * p.ln();
            }
        }
        if let Some(cid) = context_id {
            let ctx = self.context(cid);
            if ctx.pull.len() != v {
                return Err(ProviderError::Synthetic(format!("pull of `{cid}` has wrong length")));
            }
            let gain = match &ctx.mentioned_entity {
                Some(m) if m == entity_id => 1.0,
                _ => self.irrelevant_scale,
            };
            if gain > 0.0 {
                for (l, p) in logits.iter_mut().zip(&ctx.pull) {
                    *l += gain * p.ln();
                }
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(ProviderError::Synthetic("prior and pull have disjoint support".into()));
        }
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|l| l - lse).collect())
    }
}

pub struct SyntheticProvider {
    spec: SyntheticModelSpec,
}

impl SyntheticProvider {
    pub fn new(spec: SyntheticModelSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }
}

impl AnswerDistributionProvider for SyntheticProvider {
    fn provider_id(&self) -> &str {
        "synthetic"
    }

    fn model_id(&self) -> &str {
        &self.spec.model_id
    }

    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        let lp = self.spec.log_distribution(&prompt.parts.entity_id, prompt.parts.context_id.as_deref())?;
        Ok(lp.into_iter().map(|x| x as f32).collect())
    }

    /// The most probable answer string.
    fn generate(&self, prompt: &Prompt, _max_tokens: usize) -> Result<String> {
        let d = self.distribution(prompt)?;
        Ok(self.spec.answers[d.argmax()].clone())
    }
}
