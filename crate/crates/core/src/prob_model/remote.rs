//! Blocking client for the inference sidecar's JSON API.
//!
//! Endpoints: `POST /v1/next_token_distribution`, `POST /v1/generate`,
//! `GET /v1/health`.

use super::{cache_key, AnswerDistributionProvider, Prompt, ProviderError, Result};
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistributionEncoding {
    JsonArray,
    #[default]
    Base64F32le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Expected model id; taken from the health endpoint when empty.
    pub model_id: String,
    pub max_in_flight: usize,
    pub attempts: usize,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub encoding: DistributionEncoding,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            model_id: String::new(),
            max_in_flight: 8,
            attempts: 3,
            backoff_ms: 500,
            timeout_ms: 120_000,
            encoding: DistributionEncoding::Base64F32le,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model_id: String,
    pub vocab_size: usize,
}

#[derive(Serialize)]
struct DistributionRequest<'a> {
    prompt: &'a str,
    encoding: DistributionEncoding,
}

#[derive(Deserialize)]
struct DistributionResponse {
    model_id: String,
    vocab_size: usize,
    logprobs: serde_json::Value,
    #[serde(default)]
    encoding: Option<DistributionEncoding>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[allow(dead_code)]
    n_tokens: usize,
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permits");
        while *free == 0 {
            free = self.cv.wait(free).expect("permits");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permits") += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(u16, String),
}

pub struct RemoteProvider {
    config: RemoteConfig,
    model_id: String,
    agent: ureq::Agent,
    permits: Permits,
}

impl RemoteProvider {
    /// Creates a client. If `config.model_id` is empty, the health endpoint
    /// is queried for it.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() };
        let mut provider = Self { model_id: config.model_id.clone(), config, agent, permits };
        if provider.model_id.is_empty() {
            let health = provider.health()?;
            if health.status != "ok" && health.status != "ready" {
                log::warn!("sidecar reports status `{}`", health.status);
            }
            provider.model_id = health.model_id;
        }
        Ok(provider)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn key_for(&self, prompt: &str) -> String {
        hex::encode(cache_key("remote", &self.model_id, prompt))
    }

    pub fn health(&self) -> Result<HealthStatus> {
        let url = self.url("/v1/health");
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| ProviderError::Transport { key: url.clone(), attempts: 1, message: e.to_string() })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Rejected { key: url, status, message: body });
        }
        resp.body_mut().read_json().map_err(|e| ProviderError::Malformed(e.to_string()))
    }

    fn post_with_retries<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B, prompt: &str) -> Result<T> {
        let _permit = self.permits.acquire();
        let url = self.url(path);
        let attempts = self.config.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let outcome = match self.agent.post(&url).send_json(body) {
                Err(e) => Err(Failure::Retryable(e.to_string())),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 200 {
                        resp.body_mut().read_json::<T>().map_err(|e| Failure::Retryable(format!("bad body: {e}")))
                    } else {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        if status >= 500 || status == 429 {
                            Err(Failure::Retryable(format!("status {status}: {text}")))
                        } else {
                            Err(Failure::Fatal(status, text))
                        }
                    }
                }
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(status, message)) => {
                    return Err(ProviderError::Rejected { key: self.key_for(prompt), status, message })
                }
                Err(Failure::Retryable(m)) => {
                    log::debug!("{url}: attempt {} failed: {m}", attempt + 1);
                    last = m;
                }
            }
        }
        Err(ProviderError::Transport { key: self.key_for(prompt), attempts, message: last })
    }
}

fn decode_logprobs(value: &serde_json::Value, encoding: DistributionEncoding) -> Result<Vec<f32>> {
    match (value, encoding) {
        (serde_json::Value::Array(items), _) => items
            .iter()
            .map(|v| match v {
                serde_json::Value::Number(n) => n.as_f64().map(|x| x as f32),
                // -Infinity is not representable in JSON numbers.
                serde_json::Value::Null => Some(f32::NEG_INFINITY),
                _ => None,
            })
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| ProviderError::Malformed("non-numeric logprob".into())),
        (serde_json::Value::String(s), DistributionEncoding::Base64F32le) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(|e| ProviderError::Malformed(format!("base64: {e}")))?;
            if bytes.len() % 4 != 0 {
                return Err(ProviderError::Malformed("payload length is not a multiple of 4".into()));
            }
            Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        }
        _ => Err(ProviderError::Malformed("unexpected logprobs payload".into())),
    }
}

impl AnswerDistributionProvider for RemoteProvider {
    fn provider_id(&self) -> &str {
        "remote"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        if prompt.text.is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let req = DistributionRequest { prompt: &prompt.text, encoding: self.config.encoding };
        let resp: DistributionResponse = self.post_with_retries("/v1/next_token_distribution", &req, &prompt.text)?;
        if !self.model_id.is_empty() && resp.model_id != self.model_id {
            return Err(ProviderError::Malformed(format!(
                "expected model `{}`, sidecar answered as `{}`",
                self.model_id, resp.model_id
            )));
        }
        let encoding = resp.encoding.unwrap_or(self.config.encoding);
        let values = decode_logprobs(&resp.logprobs, encoding)?;
        if values.len() != resp.vocab_size {
            return Err(ProviderError::VocabMismatch { model: resp.model_id, expected: resp.vocab_size, got: values.len() });
        }
        Ok(values)
    }

    fn generate(&self, prompt: &Prompt, max_tokens: usize) -> Result<String> {
        let req = GenerateRequest { prompt: &prompt.text, max_tokens };
        let resp: GenerateResponse = self.post_with_retries("/v1/generate", &req, &prompt.text)?;
        Ok(resp.text)
    }
}
