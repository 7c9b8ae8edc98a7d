mod common;

use common::sidecar::{self, distribution_reply, healthy, mock_logprobs, Reply, Request, MODEL_ID, VOCAB};
use ctxprobe::prob_model::{
    batch_get, get_distribution, AnswerDistributionProvider, CachedProvider, DistributionCache, DistributionEncoding, Prompt,
    ProviderError, RemoteConfig, RemoteProvider,
};
use std::sync::Arc;
use std::time::Duration;

fn config(url: &str) -> RemoteConfig {
    RemoteConfig { endpoint: url.to_string(), backoff_ms: 1, timeout_ms: 5_000, ..RemoteConfig::default() }
}

fn prompts(n: usize) -> Vec<Prompt> {
    (0..n).map(|i| Prompt::bare(&format!("The capital of Country{i} is"), &format!("q{i}"), &format!("e{i}"))).collect()
}

#[test]
fn batch_equals_sequential_calls() {
    let server = sidecar::start(Arc::new(healthy), Duration::from_millis(2));
    let provider = RemoteProvider::connect(RemoteConfig { max_in_flight: 4, ..config(&server.url) }).unwrap();
    assert_eq!(provider.model_id(), MODEL_ID);
    let ps = prompts(50);
    let batch = batch_get(&provider, &ps, 16).unwrap();
    let sequential: Vec<_> = ps.iter().map(|p| get_distribution(&provider, p).unwrap()).collect();
    assert_eq!(batch, sequential);
    for (d, p) in batch.iter().zip(&ps) {
        let want: Vec<f32> = mock_logprobs(&p.text);
        assert_eq!(provider.logprobs(p).unwrap(), want, "wire values are passed through bit-exactly");
        assert_eq!(d.vocab_size(), VOCAB);
        for (got, w) in d.probs().iter().zip(&want) {
            assert!((got - (*w as f64).exp()).abs() < 1e-6);
        }
    }
    // The client caps concurrency at max_in_flight even when the batch asks for more.
    assert!(server.peak.load(std::sync::atomic::Ordering::SeqCst) <= 4);
}

#[test]
fn both_encodings_agree() {
    let server = sidecar::start(Arc::new(healthy), Duration::ZERO);
    let p = &prompts(1)[0];
    let b64 = RemoteProvider::connect(RemoteConfig { encoding: DistributionEncoding::Base64F32le, ..config(&server.url) }).unwrap();
    let arr = RemoteProvider::connect(RemoteConfig { encoding: DistributionEncoding::JsonArray, ..config(&server.url) }).unwrap();
    assert_eq!(b64.logprobs(p).unwrap(), arr.logprobs(p).unwrap());
}

#[test]
fn retries_transient_failures() {
    let flaky = |req: &Request, n: usize| match n {
        0 => Reply::json(503, serde_json::json!({"error": "loading"})),
        1 => Reply::json(429, serde_json::json!({"error": "busy"})),
        _ => distribution_reply(req),
    };
    let server = sidecar::start(Arc::new(flaky), Duration::ZERO);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), ..config(&server.url) }).unwrap();
    let got = provider.logprobs(&prompts(1)[0]).unwrap();
    assert_eq!(got.len(), VOCAB);
    assert_eq!(server.hits.load(std::sync::atomic::Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_bounded_attempts() {
    let down = |_: &Request, _: usize| Reply::json(500, serde_json::json!({"error": "boom"}));
    let server = sidecar::start(Arc::new(down), Duration::ZERO);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), ..config(&server.url) }).unwrap();
    match provider.logprobs(&prompts(1)[0]) {
        Err(ProviderError::Transport { attempts, key, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(key.len(), 64);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits.load(std::sync::atomic::Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let reject = |_: &Request, _: usize| Reply::json(413, serde_json::json!({"error": "prompt too long"}));
    let server = sidecar::start(Arc::new(reject), Duration::ZERO);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), ..config(&server.url) }).unwrap();
    assert!(matches!(provider.logprobs(&prompts(1)[0]), Err(ProviderError::Rejected { status: 413, .. })));
    assert_eq!(server.hits.load(std::sync::atomic::Ordering::SeqCst), 1);
}

#[test]
fn batch_failure_names_the_prompt() {
    let picky = |req: &Request, _: usize| {
        if req.body["prompt"].as_str().is_some_and(|p| p.contains("Country7 ")) {
            Reply::json(400, serde_json::json!({"error": "no"}))
        } else {
            distribution_reply(req)
        }
    };
    let server = sidecar::start(Arc::new(picky), Duration::ZERO);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), ..config(&server.url) }).unwrap();
    match batch_get(&provider, &prompts(20), 4) {
        Err(ProviderError::Batch { index, prompt, .. }) => {
            assert_eq!(index, 7);
            assert!(prompt.contains("Country7"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn health_and_model_checks() {
    let not_ready = |_: &Request, _: usize| Reply::json(503, serde_json::json!({"status": "loading"}));
    let server = sidecar::start(Arc::new(not_ready), Duration::ZERO);
    assert!(matches!(RemoteProvider::connect(config(&server.url)), Err(ProviderError::Rejected { status: 503, .. })));

    let server = sidecar::start(Arc::new(healthy), Duration::ZERO);
    let provider = RemoteProvider::connect(config(&server.url)).unwrap();
    let health = provider.health().unwrap();
    assert_eq!((health.model_id.as_str(), health.vocab_size), (MODEL_ID, VOCAB));

    let wrong = RemoteProvider::connect(RemoteConfig { model_id: "other-model".into(), ..config(&server.url) }).unwrap();
    assert!(matches!(wrong.logprobs(&prompts(1)[0]), Err(ProviderError::Malformed(_))));
}

#[test]
fn vocab_size_must_match_payload() {
    let short = |_: &Request, _: usize| {
        Reply::json(200, serde_json::json!({"model_id": MODEL_ID, "vocab_size": 5, "logprobs": [-1.0, -2.0], "encoding": "json_array"}))
    };
    let server = sidecar::start(Arc::new(short), Duration::ZERO);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), ..config(&server.url) }).unwrap();
    assert!(matches!(provider.logprobs(&prompts(1)[0]), Err(ProviderError::VocabMismatch { expected: 5, got: 2, .. })));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let provider = RemoteProvider::connect(RemoteConfig { model_id: MODEL_ID.into(), attempts: 2, ..config(&url) }).unwrap();
    assert!(matches!(provider.logprobs(&prompts(1)[0]), Err(ProviderError::Transport { attempts: 2, .. })));
}

#[test]
fn generation_and_cache_round_trip() {
    let server = sidecar::start(Arc::new(healthy), Duration::ZERO);
    let provider = RemoteProvider::connect(config(&server.url)).unwrap();
    let p = &prompts(1)[0];
    let d = get_distribution(&provider, p).unwrap();
    assert_eq!(provider.generate(p, 10).unwrap(), format!(" tok{}", d.argmax()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.bin");
    let cached = CachedProvider::new(provider, Arc::new(DistributionCache::open(&path).unwrap()));
    let ps = prompts(10);
    let first = batch_get(&cached, &ps, 4).unwrap();
    let hits = server.hits.load(std::sync::atomic::Ordering::SeqCst);
    let again = batch_get(&cached, &ps, 4).unwrap();
    assert_eq!(first, again);
    assert_eq!(server.hits.load(std::sync::atomic::Ordering::SeqCst), hits, "warm cache must not call the sidecar");
}
