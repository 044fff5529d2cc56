//! Client for OpenAI-compatible completions endpoints.
//!
//! Scores come from the log-probabilities the endpoint reports for the
//! first generated token: one request per prompt with `max_tokens: 1` and
//! `logprobs` set high enough to cover every candidate label. Both the
//! legacy completions shape (`logprobs.top_logprobs[0]` as a map) and the
//! chat shape (`logprobs.content[0].top_logprobs` as a list) are accepted.
//! Transient failures (connection errors, 429, 5xx) are retried with
//! exponential backoff.

use super::{Provider, ProviderError, TokenLogits};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::time::Duration;

/// Floor for the requested top-k; raised if the label set is larger.
const MIN_TOP_K: usize = 20;
const COMPLETE_MAX_TOKENS: u32 = 16;
const BACKOFF_BASE_MS: u64 = 200;

pub struct HttpProvider {
    id: String,
    model_name: String,
    url: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(
        id: String,
        model_name: String,
        url: String,
        timeout: Duration,
        max_retries: u32,
        api_key: Option<String>,
    ) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client builds with default TLS");
        Self {
            id,
            model_name,
            url,
            client,
            max_retries,
            api_key,
        }
    }

    /// POSTs `body`, retrying transient failures, and returns the parsed
    /// response JSON.
    fn post(&self, body: &Value) -> Result<Value, ProviderError> {
        let attempts = self.max_retries + 1;
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    BACKOFF_BASE_MS << (attempt - 1).min(4),
                ));
            }
            let mut request = self.client.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let response = match request.send() {
                Ok(response) => response,
                Err(err) => {
                    last_err = Some(ProviderError::Network {
                        attempts: attempt + 1,
                        reason: err.to_string(),
                    });
                    continue;
                }
            };
            let status = response.status();
            let text = response.text().map_err(|err| ProviderError::Network {
                attempts: attempt + 1,
                reason: err.to_string(),
            })?;
            if status.is_success() {
                return serde_json::from_str(&text).map_err(|err| {
                    ProviderError::InvalidResponse {
                        reason: format!("response is not JSON: {err}"),
                    }
                });
            }
            let error = ProviderError::Http {
                status: status.as_u16(),
                body: text.chars().take(400).collect(),
            };
            let retryable = status.as_u16() == 429 || status.is_server_error();
            if !retryable {
                return Err(error);
            }
            last_err = Some(error);
        }
        Err(last_err.unwrap_or(ProviderError::Network {
            attempts,
            reason: "no attempts made".to_string(),
        }))
    }
}

fn first_choice(response: &Value) -> Result<&Value, ProviderError> {
    response
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|choices| choices.first())
        .ok_or_else(|| ProviderError::InvalidResponse {
            reason: "no choices in response".to_string(),
        })
}

/// Extracts the first generated token's top log-probabilities as a
/// token -> logprob map, accepting either response shape.
fn top_logprob_map(choice: &Value) -> Result<HashMap<String, f64>, ProviderError> {
    let logprobs = choice
        .get("logprobs")
        .filter(|v| !v.is_null())
        .ok_or_else(|| ProviderError::InvalidResponse {
            reason: "response has no logprobs block".to_string(),
        })?;

    // Legacy completions: logprobs.top_logprobs[0] is {token: logprob}.
    if let Some(first) = logprobs
        .get("top_logprobs")
        .and_then(Value::as_array)
        .and_then(|entries| entries.first())
    {
        if let Some(map) = first.as_object() {
            let mut out = HashMap::new();
            for (token, logprob) in map {
                let value = logprob
                    .as_f64()
                    .ok_or_else(|| ProviderError::InvalidResponse {
                        reason: format!("logprob for token {token:?} is not a number"),
                    })?;
                out.insert(token.clone(), value);
            }
            return Ok(out);
        }
    }

    // Chat: logprobs.content[0].top_logprobs is [{token, logprob}].
    if let Some(entries) = logprobs
        .get("content")
        .and_then(Value::as_array)
        .and_then(|content| content.first())
        .and_then(|first| first.get("top_logprobs"))
        .and_then(Value::as_array)
    {
        let mut out = HashMap::new();
        for entry in entries {
            let token = entry
                .get("token")
                .and_then(Value::as_str)
                .ok_or_else(|| ProviderError::InvalidResponse {
                    reason: "top_logprobs entry without a token".to_string(),
                })?;
            let value = entry
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| ProviderError::InvalidResponse {
                    reason: format!("logprob for token {token:?} is not a number"),
                })?;
            out.insert(token.to_string(), value);
        }
        return Ok(out);
    }

    Err(ProviderError::InvalidResponse {
        reason: "logprobs block has neither top_logprobs nor content".to_string(),
    })
}

fn choice_text(choice: &Value) -> Result<String, ProviderError> {
    if let Some(text) = choice.get("text").and_then(Value::as_str) {
        return Ok(text.to_string());
    }
    if let Some(text) = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
    {
        return Ok(text.to_string());
    }
    Err(ProviderError::InvalidResponse {
        reason: "choice has neither text nor message.content".to_string(),
    })
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model_name,
            "prompt": prompt,
            "max_tokens": COMPLETE_MAX_TOKENS,
            "temperature": 0.0,
        });
        let response = self.post(&body)?;
        choice_text(first_choice(&response)?)
    }

    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError> {
        if labels.is_empty() {
            return Err(ProviderError::EmptyLabels);
        }
        let top_k = MIN_TOP_K.max(labels.len());
        let body = json!({
            "model": self.model_name,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": top_k,
        });
        let response = self.post(&body)?;
        let map = top_logprob_map(first_choice(&response)?)?;

        // Tokenizers often attach leading whitespace; match on the trimmed
        // token and keep the likeliest variant per label.
        let mut logits = Vec::with_capacity(labels.len());
        for label in labels {
            let best = map
                .iter()
                .filter(|(token, _)| token.trim() == label)
                .map(|(_, logprob)| *logprob)
                .fold(None, |acc: Option<f64>, lp| {
                    Some(acc.map_or(lp, |best| best.max(lp)))
                });
            match best {
                Some(logprob) => logits.push(logprob),
                None => {
                    return Err(ProviderError::LabelNotInTopK {
                        label: label.clone(),
                        top_k,
                    })
                }
            }
        }
        TokenLogits::new(self.id.clone(), labels.to_vec(), logits)
    }
}
