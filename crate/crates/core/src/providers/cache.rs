//! File-backed response cache and replay provider.
//!
//! One JSON file per key under the cache directory. Keys hash the provider
//! id, model name, prompt, and candidate labels, so any change to those
//! yields a fresh entry. Every entry carries a payload checksum; an entry
//! that fails the checksum (or does not parse) counts as a miss and is
//! rewritten on the next successful backend call. In replay mode there is
//! no backend: a miss is an error.

use super::{Provider, ProviderError, TokenLogits};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Serve hits, forward misses to the wrapped backend, write results.
    ReadWrite,
    /// Serve hits only; misses fail. No backend is consulted.
    Replay,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CachePayload {
    kind: String,
    provider_id: String,
    model_name: String,
    prompt_sha256: String,
    labels: Vec<String>,
    logits: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    payload: CachePayload,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn payload_checksum(payload: &CachePayload) -> String {
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    sha256_hex(&bytes)
}

fn cache_key(
    kind: &str,
    provider_id: &str,
    model_name: &str,
    prompt: &str,
    labels: &[String],
) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for part in [kind, provider_id, model_name, prompt] {
        hasher.update(part.as_bytes());
        hasher.update([0]);
    }
    for label in labels {
        hasher.update(label.as_bytes());
        hasher.update([0x1f]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Caching wrapper (or, in replay mode, a cache-only provider).
pub struct CachedProvider {
    dir: PathBuf,
    mode: CacheMode,
    inner: Option<Box<dyn Provider>>,
    provider_id: String,
    model_name: String,
}

impl CachedProvider {
    pub fn read_write(dir: &Path, inner: Box<dyn Provider>) -> Self {
        Self {
            dir: dir.to_path_buf(),
            mode: CacheMode::ReadWrite,
            provider_id: inner.id().to_string(),
            model_name: inner.model_name().to_string(),
            inner: Some(inner),
        }
    }

    /// Replays a previous run. The id and model name must match the run
    /// that populated the cache, since both participate in the key.
    pub fn replay(dir: &Path, provider_id: String, model_name: String) -> Self {
        Self {
            dir: dir.to_path_buf(),
            mode: CacheMode::Replay,
            inner: None,
            provider_id,
            model_name,
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Reads and verifies an entry. Any parse or checksum failure is a miss.
    fn read_entry(&self, key: &str, kind: &str, prompt_sha: &str) -> Option<CachePayload> {
        let path = self.entry_path(key);
        let bytes = std::fs::read(&path).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        if payload_checksum(&entry.payload) != entry.checksum {
            return None;
        }
        if entry.payload.kind != kind || entry.payload.prompt_sha256 != prompt_sha {
            return None;
        }
        Some(entry.payload)
    }

    fn write_entry(&self, key: &str, payload: CachePayload) -> Result<(), ProviderError> {
        let path = self.entry_path(key);
        let io_err = |source| ProviderError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&self.dir).map_err(io_err)?;
        let entry = CacheEntry {
            checksum: payload_checksum(&payload),
            payload,
        };
        let bytes = serde_json::to_vec(&entry).expect("entry serializes");
        let tmp = self.dir.join(format!(
            "{key}.tmp.{}.{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, &bytes).map_err(io_err)?;
        std::fs::rename(&tmp, &path).map_err(io_err)
    }

    fn miss(&self, key: &str) -> ProviderError {
        ProviderError::CacheMiss {
            key: key.to_string(),
        }
    }
}

impl Provider for CachedProvider {
    fn id(&self) -> &str {
        &self.provider_id
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let key = cache_key("complete", &self.provider_id, &self.model_name, prompt, &[]);
        let prompt_sha = sha256_hex(prompt.as_bytes());
        if let Some(payload) = self.read_entry(&key, "complete", &prompt_sha) {
            if let Some(text) = payload.text {
                return Ok(text);
            }
        }
        let inner = match &self.inner {
            Some(inner) => inner,
            None => return Err(self.miss(&key)),
        };
        let text = inner.complete(prompt)?;
        self.write_entry(
            &key,
            CachePayload {
                kind: "complete".to_string(),
                provider_id: self.provider_id.clone(),
                model_name: self.model_name.clone(),
                prompt_sha256: prompt_sha,
                labels: Vec::new(),
                logits: Vec::new(),
                text: Some(text.clone()),
            },
        )?;
        Ok(text)
    }

    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError> {
        let key = cache_key("logits", &self.provider_id, &self.model_name, prompt, labels);
        let prompt_sha = sha256_hex(prompt.as_bytes());
        if let Some(payload) = self.read_entry(&key, "logits", &prompt_sha) {
            if payload.labels == labels {
                if let Ok(logits) =
                    TokenLogits::new(payload.provider_id, payload.labels, payload.logits)
                {
                    return Ok(logits);
                }
            }
        }
        let inner = match &self.inner {
            Some(inner) => inner,
            None => return Err(self.miss(&key)),
        };
        let logits = inner.first_token_logits(prompt, labels)?;
        self.write_entry(
            &key,
            CachePayload {
                kind: "logits".to_string(),
                provider_id: logits.provider_id.clone(),
                model_name: self.model_name.clone(),
                prompt_sha256: prompt_sha,
                labels: logits.labels.clone(),
                logits: logits.logits.clone(),
                text: None,
            },
        )?;
        Ok(logits)
    }
}
