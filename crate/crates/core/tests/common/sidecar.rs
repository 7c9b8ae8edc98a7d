//! In-process stand-in for the inference sidecar: a std TcpListener
//! speaking just enough HTTP/1.1 for the remote client.

use base64::Engine;
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub const MODEL_ID: &str = "mock-lm";
pub const VOCAB: usize = 7;

#[derive(Debug, Clone)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub body: serde_json::Value,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, v: serde_json::Value) -> Self {
        Reply { status, body: v.to_string() }
    }
}

pub type Handler = Arc<dyn Fn(&Request, usize) -> Reply + Send + Sync>;

pub struct MockSidecar {
    pub url: String,
    /// Requests seen so far, all endpoints.
    pub hits: Arc<AtomicUsize>,
    /// Highest number of requests being handled at once.
    pub peak: Arc<AtomicUsize>,
}

/// Log-softmax over `VOCAB` tokens derived from a hash of the prompt.
pub fn mock_logprobs(prompt: &str) -> Vec<f32> {
    let digest = Sha256::digest(prompt.as_bytes());
    let logits: Vec<f64> = digest[..VOCAB].iter().map(|b| *b as f64 / 32.0).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| (l - lse) as f32).collect()
}

pub fn distribution_reply(req: &Request) -> Reply {
    let prompt = req.body["prompt"].as_str().unwrap_or_default();
    if prompt.is_empty() {
        return Reply::json(400, serde_json::json!({"error": "empty prompt"}));
    }
    let lp = mock_logprobs(prompt);
    let encoding = req.body["encoding"].as_str().unwrap_or("json_array");
    let payload = if encoding == "base64_f32le" {
        let bytes: Vec<u8> = lp.iter().flat_map(|v| v.to_le_bytes()).collect();
        serde_json::Value::String(base64::engine::general_purpose::STANDARD.encode(bytes))
    } else {
        serde_json::json!(lp)
    };
    Reply::json(200, serde_json::json!({"model_id": MODEL_ID, "vocab_size": VOCAB, "logprobs": payload, "encoding": encoding}))
}

/// Well-behaved sidecar: health, distributions, greedy "generation" that
/// names the argmax token.
pub fn healthy(req: &Request, _n: usize) -> Reply {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/v1/health") => Reply::json(200, serde_json::json!({"status": "ok", "model_id": MODEL_ID, "vocab_size": VOCAB})),
        ("POST", "/v1/next_token_distribution") => distribution_reply(req),
        ("POST", "/v1/generate") => {
            let lp = mock_logprobs(req.body["prompt"].as_str().unwrap_or_default());
            let best = (0..VOCAB).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap();
            Reply::json(200, serde_json::json!({"text": format!(" tok{best}"), "n_tokens": 1}))
        }
        _ => Reply::json(404, serde_json::json!({"error": "not found"})),
    }
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<Request> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    let body = if body.is_empty() { serde_json::Value::Null } else { serde_json::from_slice(&body).ok()? };
    Some(Request { method, path, body })
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

struct Busy(Arc<AtomicUsize>);

impl Drop for Busy {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Starts a server on an ephemeral port. The handler also receives the
/// 0-based index of the request among all requests.
pub fn start(handler: Handler, delay: Duration) -> MockSidecar {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let (h2, p2) = (hits.clone(), peak.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (handler, hits, peak, active) = (handler.clone(), h2.clone(), p2.clone(), active.clone());
            std::thread::spawn(move || {
                let mut writer = stream.try_clone().expect("clone stream");
                let mut reader = BufReader::new(stream);
                while let Some(req) = read_request(&mut reader) {
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    let _busy = Busy(active.clone());
                    peak.fetch_max(now, Ordering::SeqCst);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    let reply = handler(&req, n);
                    let head = format!(
                        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
                        reply.status,
                        reason(reply.status),
                        reply.body.len()
                    );
                    if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(reply.body.as_bytes())).is_err() {
                        break;
                    }
                }
            });
        }
    });
    MockSidecar { url, hits, peak }
}
