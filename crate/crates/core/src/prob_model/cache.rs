use super::{AnswerDistributionProvider, Prompt, ProviderError, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

pub type CacheKey = [u8; 32];

/// SHA-256 over the length-prefixed provider id, model id and prompt text.
pub fn cache_key(provider_id: &str, model_id: &str, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    for field in [provider_id, model_id, text] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    h.finalize().into()
}

/// Append-only store of log-probability vectors.
///
/// On-disk record layout (repeated until EOF):
/// `key: [u8; 32] | vocab_size: u32 LE | vocab_size × f32 LE`.
/// A truncated trailing record (interrupted write) is dropped on load.
pub struct DistributionCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, Arc<[f32]>>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl std::fmt::Debug for DistributionCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistributionCache").field("path", &self.path).field("len", &self.len()).finish()
    }
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Cache { path: path.display().to_string(), message: e.to_string() }
}

impl DistributionCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Loads `path` if it exists and opens it for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (entries, valid_len) = if path.exists() { Self::read_records(&path)? } else { (HashMap::new(), 0) };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| cache_err(&path, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| cache_err(&path, e))?;
        let on_disk = file.metadata().map_err(|e| cache_err(&path, e))?.len();
        if on_disk > valid_len {
            log::warn!("{}: dropping {} bytes of truncated record", path.display(), on_disk - valid_len);
            file.set_len(valid_len).map_err(|e| cache_err(&path, e))?;
        }
        Ok(Self { path: Some(path), entries: RwLock::new(entries), writer: Mutex::new(Some(BufWriter::new(file))) })
    }

    /// Read-only load, for replay.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (entries, _) = Self::read_records(&path)?;
        Ok(Self { path: Some(path), entries: RwLock::new(entries), writer: Mutex::new(None) })
    }

    fn read_records(path: &Path) -> Result<(HashMap<CacheKey, Arc<[f32]>>, u64)> {
        let mut reader = BufReader::new(File::open(path).map_err(|e| cache_err(path, e))?);
        let mut entries = HashMap::new();
        let mut offset = 0u64;
        loop {
            let mut key = [0u8; 32];
            match read_full(&mut reader, &mut key) {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => return Err(cache_err(path, e)),
            }
            let mut len = [0u8; 4];
            if !read_full(&mut reader, &mut len).map_err(|e| cache_err(path, e))? {
                break;
            }
            let n = u32::from_le_bytes(len) as usize;
            let mut raw = vec![0u8; n * 4];
            if !read_full(&mut reader, &mut raw).map_err(|e| cache_err(path, e))? {
                break;
            }
            let values: Arc<[f32]> =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            entries.entry(key).or_insert(values);
            offset += 36 + n as u64 * 4;
        }
        Ok((entries, offset))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<[f32]>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Inserts a record unless the key is already present; returns the stored
    /// vector either way.
    pub fn insert(&self, key: CacheKey, logprobs: &[f32]) -> Result<Arc<[f32]>> {
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(existing) = entries.get(&key) {
            return Ok(existing.clone());
        }
        let stored: Arc<[f32]> = logprobs.into();
        if let Some(w) = self.writer.lock().expect("writer lock").as_mut() {
            let path = self.path.as_deref().unwrap_or(Path::new("<memory>"));
            let mut buf = Vec::with_capacity(36 + logprobs.len() * 4);
            buf.extend_from_slice(&key);
            buf.extend_from_slice(&(logprobs.len() as u32).to_le_bytes());
            for v in logprobs {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| cache_err(path, e))?;
        }
        entries.insert(key, stored.clone());
        Ok(stored)
    }
}

/// Fills `buf` completely. `Ok(false)` on a clean or partial EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Write-through cache in front of another provider.
pub struct CachedProvider<P> {
    inner: P,
    cache: Arc<DistributionCache>,
    vocab_size: Mutex<Option<usize>>,
}

impl<P: AnswerDistributionProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: Arc<DistributionCache>) -> Self {
        Self { inner, cache, vocab_size: Mutex::new(None) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn cache(&self) -> &Arc<DistributionCache> {
        &self.cache
    }

    fn check_vocab(&self, got: usize) -> Result<()> {
        let mut v = self.vocab_size.lock().expect("vocab lock");
        match *v {
            None => {
                *v = Some(got);
                Ok(())
            }
            Some(expected) if expected == got => Ok(()),
            Some(expected) => {
                Err(ProviderError::VocabMismatch { model: self.inner.model_id().to_string(), expected, got })
            }
        }
    }
}

impl<P: AnswerDistributionProvider> AnswerDistributionProvider for CachedProvider<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        let key = cache_key(self.inner.provider_id(), self.inner.model_id(), &prompt.text);
        if let Some(hit) = self.cache.get(&key) {
            self.check_vocab(hit.len())?;
            return Ok(hit.to_vec());
        }
        let fresh = self.inner.logprobs(prompt)?;
        self.check_vocab(fresh.len())?;
        Ok(self.cache.insert(key, &fresh)?.to_vec())
    }

    fn generate(&self, prompt: &Prompt, max_tokens: usize) -> Result<String> {
        self.inner.generate(prompt, max_tokens)
    }
}

/// Serves distributions recorded earlier by another provider; misses are
/// errors.
pub struct ReplayProvider {
    cache: Arc<DistributionCache>,
    source_provider_id: String,
    model_id: String,
}

impl ReplayProvider {
    pub fn new(cache: Arc<DistributionCache>, source_provider_id: &str, model_id: &str) -> Self {
        Self { cache, source_provider_id: source_provider_id.into(), model_id: model_id.into() }
    }

    /// The stored vector, bit for bit.
    pub fn stored(&self, prompt: &Prompt) -> Result<Arc<[f32]>> {
        let key = cache_key(&self.source_provider_id, &self.model_id, &prompt.text);
        self.cache.get(&key).ok_or_else(|| ProviderError::CacheMiss { key: hex::encode(key) })
    }
}

impl AnswerDistributionProvider for ReplayProvider {
    fn provider_id(&self) -> &str {
        &self.source_provider_id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn logprobs(&self, prompt: &Prompt) -> Result<Vec<f32>> {
        Ok(self.stored(prompt)?.to_vec())
    }
}
