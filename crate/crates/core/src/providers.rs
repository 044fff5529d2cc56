//! Model backends: synthetic, replay cache, and HTTP.
//!
//! A [`Provider`] answers two questions about a prompt: what text does the
//! model produce (greedy), and what are the first-token scores over a fixed
//! candidate label set. Scores may be raw logits or log-probabilities; the
//! decode layer renormalizes over the candidate set, which is invariant to
//! the uniform shift between the two, so both are handled identically.

mod cache;
mod http;
mod synthetic;

pub use cache::{CacheMode, CachedProvider};
pub use http::HttpProvider;
pub use synthetic::{
    synth_logits, value_anchored_bias, BiasProfile, FamilyMember, FamilyProvider,
    SyntheticFamily, SyntheticProvider,
};

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("candidate label set is empty")]
    EmptyLabels,
    #[error("labels and logits lengths differ: {labels} vs {logits}")]
    LengthMismatch { labels: usize, logits: usize },
    #[error("logit for label {label:?} is not finite: {value}")]
    NonFiniteLogit { label: String, value: f64 },
    #[error("requested label {requested:?} does not match configured label {configured:?}")]
    LabelMismatch {
        requested: String,
        configured: String,
    },
    #[error("label {label:?} missing from the top-{top_k} log-probabilities")]
    LabelNotInTopK { label: String, top_k: usize },
    #[error("quality must lie in [0, 1], got {value}")]
    InvalidQuality { value: f64 },
    #[error("invalid bias profile: {reason}")]
    InvalidProfile { reason: String },
    #[error("endpoint {endpoint:?} is neither synthetic, replay, nor an http(s) URL")]
    InvalidEndpoint { endpoint: String },
    #[error("synthetic endpoint requires synthetic parameters in the provider config")]
    MissingSyntheticParams,
    #[error("replay endpoint requires a cache directory")]
    ReplayWithoutCache,
    #[error("replay cache miss for key {key}")]
    CacheMiss { key: String },
    #[error("cache io on {path}: {source}")]
    CacheIo {
        path: String,
        source: std::io::Error,
    },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error after {attempts} attempt(s): {reason}")]
    Network { attempts: u32, reason: String },
    #[error("unexpected response shape: {reason}")]
    InvalidResponse { reason: String },
}

/// First-token scores over a candidate label set, aligned by index.
/// Values may be raw logits or log-probabilities; downstream renormalization
/// over the candidate set treats both the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogits {
    pub provider_id: String,
    pub labels: Vec<String>,
    pub logits: Vec<f64>,
}

impl TokenLogits {
    pub fn new(
        provider_id: impl Into<String>,
        labels: Vec<String>,
        logits: Vec<f64>,
    ) -> Result<Self, ProviderError> {
        if labels.is_empty() {
            return Err(ProviderError::EmptyLabels);
        }
        if labels.len() != logits.len() {
            return Err(ProviderError::LengthMismatch {
                labels: labels.len(),
                logits: logits.len(),
            });
        }
        for (label, &value) in labels.iter().zip(&logits) {
            if !value.is_finite() {
                return Err(ProviderError::NonFiniteLogit {
                    label: label.clone(),
                    value,
                });
            }
        }
        Ok(Self {
            provider_id: provider_id.into(),
            labels,
            logits,
        })
    }

    /// Index of the highest score; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate().skip(1) {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// A model backend the judge can query.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn model_name(&self) -> &str;
    /// Greedy text continuation of the prompt.
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
    /// First-token scores restricted to `labels`.
    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError>;
}

/// Synthetic family parameters carried in a provider config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub bias_center: f64,
    pub bias_width: f64,
    pub bias_gain: f64,
    pub signal_weight: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    2
}

/// Declarative backend description, loadable from a config file. The
/// endpoint is `"synthetic"`, `"replay"`, or an http(s) URL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointKind {
    Synthetic,
    Replay,
    Http,
}

impl ProviderConfig {
    pub fn endpoint_kind(&self) -> Result<EndpointKind, ProviderError> {
        match self.endpoint.as_str() {
            "synthetic" => Ok(EndpointKind::Synthetic),
            "replay" => Ok(EndpointKind::Replay),
            url if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(EndpointKind::Http)
            }
            other => Err(ProviderError::InvalidEndpoint {
                endpoint: other.to_string(),
            }),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// API key for HTTP endpoints, from the environment.
pub fn api_key_from_env() -> Option<String> {
    std::env::var("RANGEJUDGE_API_KEY")
        .or_else(|_| std::env::var("OPENAI_API_KEY"))
        .ok()
        .filter(|k| !k.is_empty())
}

/// Builds the backend a config describes. `cache_dir` wraps the backend in
/// a read-write cache (and is required for replay endpoints).
pub fn build_provider(
    config: &ProviderConfig,
    cache_dir: Option<&Path>,
) -> Result<Box<dyn Provider>, ProviderError> {
    let inner: Box<dyn Provider> = match config.endpoint_kind()? {
        EndpointKind::Synthetic => {
            let params = config
                .synthetic
                .as_ref()
                .ok_or(ProviderError::MissingSyntheticParams)?;
            let family = SyntheticFamily {
                bias_center: params.bias_center,
                bias_width: params.bias_width,
            };
            let member = FamilyMember {
                signal_weight: params.signal_weight,
                bias_gain: params.bias_gain,
                noise_scale: params.noise_scale,
                seed: params.seed,
            };
            Box::new(FamilyProvider::new(
                config.provider_id.clone(),
                config.model_name.clone(),
                family,
                member,
            ))
        }
        EndpointKind::Replay => {
            let dir = cache_dir.ok_or(ProviderError::ReplayWithoutCache)?;
            return Ok(Box::new(CachedProvider::replay(
                dir,
                config.provider_id.clone(),
                config.model_name.clone(),
            )));
        }
        EndpointKind::Http => Box::new(HttpProvider::new(
            config.provider_id.clone(),
            config.model_name.clone(),
            config.endpoint.clone(),
            config.timeout(),
            config.max_retries,
            api_key_from_env(),
        )),
    };
    Ok(match cache_dir {
        Some(dir) => Box::new(CachedProvider::read_write(dir, inner)),
        None => inner,
    })
}

/// Wrapper counting backend invocations; used to verify call budgets.
pub struct CountingProvider<P> {
    inner: P,
    calls: Arc<AtomicUsize>,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }

    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.first_token_logits(prompt, labels)
    }
}
