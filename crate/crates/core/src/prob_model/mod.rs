//! Answer-distribution providers.
//!
//! Every provider answers a [`Prompt`] with natural-log probabilities over a
//! fixed answer vocabulary. Providers emit float32 log-probabilities (the
//! wire and cache format) and [`AnswerDistribution`]s are always decoded from
//! those, so cached and uncached results agree exactly.

mod cache;
mod remote;
mod synthetic;

pub use cache::{cache_key, CacheKey, CachedProvider, DistributionCache, ReplayProvider};
pub use remote::{DistributionEncoding, HealthStatus, RemoteConfig, RemoteProvider};
pub use synthetic::{SyntheticContext, SyntheticEntity, SyntheticModelSpec, SyntheticParams, SyntheticProvider};

use crate::info_metrics::{AnswerDistribution, MetricError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Default joiner between a context and the query.
pub const DEFAULT_SEPARATOR: &str = " ";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("request for prompt {key} failed after {attempts} attempt(s): {message}")]
    Transport { key: String, attempts: usize, message: String },
    #[error("server rejected prompt {key} with status {status}: {message}")]
    Rejected { key: String, status: u16, message: String },
    #[error("model `{model}` returned vocabulary size {got}, expected {expected}")]
    VocabMismatch { model: String, expected: usize, got: usize },
    #[error("no cached distribution for prompt {key}")]
    CacheMiss { key: String },
    #[error("cache file {path}: {message}")]
    Cache { path: String, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("provider `{0}` does not support generation")]
    GenerationUnsupported(String),
    #[error("synthetic model: {0}")]
    Synthetic(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("batch element {index} (`{prompt}`) failed: {source}")]
    Batch {
        index: usize,
        prompt: String,
        #[source]
        source: Box<ProviderError>,
    },
}

pub type Result<T> = std::result::Result<T, ProviderError>;

/// Structured identity of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptParts {
    pub context_id: Option<String>,
    pub query_id: String,
    pub entity_id: String,
}

/// A fully rendered prompt: `context + separator + query`, or the bare query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub parts: PromptParts,
}

impl Prompt {
    pub fn bare(query_text: &str, query_id: &str, entity_id: &str) -> Self {
        Self {
            text: query_text.to_string(),
            parts: PromptParts { context_id: None, query_id: query_id.into(), entity_id: entity_id.into() },
        }
    }

    pub fn with_context(
        context_id: &str,
        context_text: &str,
        separator: &str,
        query_text: &str,
        query_id: &str,
        entity_id: &str,
    ) -> Self {
        let mut text = String::with_capacity(context_text.len() + separator.len() + query_text.len());
        text.push_str(context_text);
        text.push_str(separator);
        text.push_str(query_text);
        Self {
            text,
            parts: PromptParts {
                context_id: Some(context_id.into()),
                query_id: query_id.into(),
                entity_id: entity_id.into(),
            },
        }
    }
}

/// Anything that maps a prompt to a next-answer distribution.
pub trait AnswerDistributionProvider: Send + Sync {
    /// Stable identifier of the provider kind, part of the cache key.
    fn provider_id(&self) -> &str;

    fn model_id(&self) -> &str;

    /// Natural-log probabilities over the vocabulary.
    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>>;

    fn distribution(&self, prompt: &Prompt) -> Result<AnswerDistribution> {
        Ok(AnswerDistribution::from_logprobs_f32(&self.logprobs(prompt)?)?)
    }

    /// Greedy continuation of at most `max_tokens` tokens.
    fn generate(&self, _prompt: &Prompt, _max_tokens: usize) -> Result<String> {
        Err(ProviderError::GenerationUnsupported(self.provider_id().to_string()))
    }
}

impl<P: AnswerDistributionProvider + ?Sized> AnswerDistributionProvider for Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        (**self).logprobs(prompt)
    }
    fn distribution(&self, prompt: &Prompt) -> Result<AnswerDistribution> {
        (**self).distribution(prompt)
    }
    fn generate(&self, prompt: &Prompt, max_tokens: usize) -> Result<String> {
        (**self).generate(prompt, max_tokens)
    }
}

impl<P: AnswerDistributionProvider + ?Sized> AnswerDistributionProvider for std::sync::Arc<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        (**self).logprobs(prompt)
    }
    fn distribution(&self, prompt: &Prompt) -> Result<AnswerDistribution> {
        (**self).distribution(prompt)
    }
    fn generate(&self, prompt: &Prompt, max_tokens: usize) -> Result<String> {
        (**self).generate(prompt, max_tokens)
    }
}

/// Single-prompt lookup.
pub fn get_distribution<P: AnswerDistributionProvider + ?Sized>(provider: &P, prompt: &Prompt) -> Result<AnswerDistribution> {
    if prompt.text.is_empty() {
        return Err(ProviderError::EmptyPrompt);
    }
    provider.distribution(prompt)
}

/// Fetches distributions for many prompts with at most `max_in_flight`
/// concurrent provider calls.
///
/// Output order matches input order. Identical prompts are fetched once.
/// The first failing prompt (by input position) aborts the batch.
pub fn batch_get<P: AnswerDistributionProvider + ?Sized>(
    provider: &P,
    prompts: &[Prompt],
    max_in_flight: usize,
) -> Result<Vec<AnswerDistribution>> {
    let max_in_flight = max_in_flight.max(1);
    let mut unique: Vec<&Prompt> = Vec::new();
    let mut slot_of: HashMap<&Prompt, usize> = HashMap::new();
    let slots: Vec<usize> = prompts
        .iter()
        .map(|p| {
            *slot_of.entry(p).or_insert_with(|| {
                unique.push(p);
                unique.len() - 1
            })
        })
        .collect();

    let results: Vec<Mutex<Option<Result<AnswerDistribution>>>> = unique.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = max_in_flight.min(unique.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= unique.len() {
                    break;
                }
                let r = get_distribution(provider, unique[i]);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut fetched: Vec<Option<Result<AnswerDistribution>>> =
        results.into_iter().map(|m| m.into_inner().expect("result slot")).collect();
    // Report the earliest failing input position.
    for (index, &slot) in slots.iter().enumerate() {
        if let Some(Err(_)) = &fetched[slot] {
            let Some(Err(source)) = fetched[slot].take() else { unreachable!() };
            return Err(ProviderError::Batch { index, prompt: prompts[index].text.clone(), source: Box::new(source) });
        }
    }
    slots
        .iter()
        .enumerate()
        .map(|(index, &slot)| match &fetched[slot] {
            Some(Ok(d)) => Ok(d.clone()),
            _ => Err(ProviderError::Batch {
                index,
                prompt: prompts[index].text.clone(),
                source: Box::new(ProviderError::Malformed("batch aborted before this prompt ran".into())),
            }),
        })
        .collect()
}
