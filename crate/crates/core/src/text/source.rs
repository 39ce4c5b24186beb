//! Text sources: a chat-completion LLM endpoint, flat lookup files captured
//! from document retrieval or internet search, and a deterministic stub.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TextProvenance;
use crate::corpus::ApiCall;

#[derive(Debug, Error)]
pub enum SourceError {
    /// The source has no text for this API call. Never retried.
    #[error("no entry for {api:?}")]
    Missing { api: String },
    /// Endpoint unreachable, timeout, bad status, malformed payload. Retryable.
    #[error("transport failure: {detail}")]
    Transport { detail: String },
}

impl SourceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SourceError::Transport { .. })
    }
}

pub trait TextSource: Send + Sync {
    fn name(&self) -> &str;
    fn provenance(&self) -> TextProvenance;
    /// Returns raw (unsanitized) explanatory text for `api`.
    fn fetch(&self, api: &ApiCall, prompt: &str) -> Result<String, SourceError>;
}

/// Retry schedule for transport errors: `max_attempts` tries with exponential
/// backoff starting at `base_delay_ms`. Missing-entry signals never retry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
        }
    }

    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, SourceError>,
    ) -> Result<T, SourceError> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.base_delay_ms > 0 {
                let delay = self.base_delay_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Decoding parameters sent to the LLM endpoint and recorded per store entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model: String,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            model: "gpt-4".to_string(),
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

/// Generic chat-completion HTTP client. Sends the rendered prompt as a single
/// user message and expects `choices[0].message.content` back.
pub struct LlmClient {
    endpoint: String,
    api_key: Option<String>,
    params: LlmParams,
    agent: ureq::Agent,
}

impl LlmClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, params: LlmParams) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            params,
            agent,
        }
    }

    pub fn params(&self) -> &LlmParams {
        &self.params
    }
}

impl TextSource for LlmClient {
    fn name(&self) -> &str {
        "llm"
    }

    fn provenance(&self) -> TextProvenance {
        TextProvenance::Llm
    }

    fn fetch(&self, api: &ApiCall, prompt: &str) -> Result<String, SourceError> {
        let mut body = serde_json::json!({
            "model": self.params.model,
            "temperature": self.params.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(max) = self.params.max_tokens {
            body["max_tokens"] = serde_json::json!(max);
        }
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| SourceError::Transport {
            detail: e.to_string(),
        })?;
        let payload: serde_json::Value =
            response
                .body_mut()
                .read_json()
                .map_err(|e| SourceError::Transport {
                    detail: format!("invalid response body: {e}"),
                })?;
        let content = payload["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or("")
            .trim()
            .to_string();
        if content.is_empty() {
            return Err(SourceError::Transport {
                detail: format!("empty completion for {}", api.as_str()),
            });
        }
        Ok(content)
    }
}

/// Flat name→text lookup loaded from a pre-captured JSON file; used for the
/// document-retrieval and internet-search acquisition methods.
pub struct LookupFileSource {
    name: String,
    provenance: TextProvenance,
    entries: BTreeMap<String, String>,
}

impl LookupFileSource {
    pub fn from_entries(
        name: impl Into<String>,
        provenance: TextProvenance,
        entries: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        Self {
            name: name.into(),
            provenance,
            entries: entries.into_iter().collect(),
        }
    }

    pub fn from_file(
        path: &Path,
        provenance: TextProvenance,
    ) -> Result<Self, super::TextError> {
        let raw = std::fs::read_to_string(path).map_err(|source| super::TextError::StoreIo {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&raw).map_err(|source| super::TextError::StoreFormat {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            name: path.display().to_string(),
            provenance,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TextSource for LookupFileSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn provenance(&self) -> TextProvenance {
        self.provenance
    }

    fn fetch(&self, api: &ApiCall, _prompt: &str) -> Result<String, SourceError> {
        self.entries
            .get(api.as_str())
            .cloned()
            .ok_or_else(|| SourceError::Missing {
                api: api.as_str().to_string(),
            })
    }
}

/// Deterministic LLM stand-in: derives a short description from the call name
/// itself. Lets the whole pipeline run without network access.
#[derive(Default)]
pub struct StubLlmSource;

impl TextSource for StubLlmSource {
    fn name(&self) -> &str {
        "stub-llm"
    }

    fn provenance(&self) -> TextProvenance {
        TextProvenance::Llm
    }

    fn fetch(&self, api: &ApiCall, _prompt: &str) -> Result<String, SourceError> {
        let words = split_camel_case(api.as_str()).to_lowercase();
        Ok(format!(
            "The {} function carries out the {} operation for the calling process. \
             Programs invoke it while interacting with the operating system, and analysts \
             watch for it when profiling runtime behavior.",
            api.as_str(),
            words
        ))
    }
}

fn split_camel_case(name: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_uppercase() && i > 0 {
            let prev_lower = chars[i - 1].is_lowercase();
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev_lower || next_lower {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

/// Wraps any source and counts fetch invocations; used to verify that cached
/// entries are never re-fetched.
pub struct CountingSource<S> {
    inner: S,
    fetches: AtomicUsize,
}

impl<S: TextSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            fetches: AtomicUsize::new(0),
        }
    }

    pub fn fetch_count(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }
}

impl<S: TextSource> TextSource for CountingSource<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn provenance(&self) -> TextProvenance {
        self.inner.provenance()
    }

    fn fetch(&self, api: &ApiCall, prompt: &str) -> Result<String, SourceError> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        self.inner.fetch(api, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn split_camel_case_handles_acronyms() {
        assert_eq!(split_camel_case("NtOpenFile"), "Nt Open File");
        assert_eq!(split_camel_case("WSASocketW"), "WSA Socket W");
        assert_eq!(split_camel_case("HttpSendRequestA"), "Http Send Request A");
    }

    #[test]
    fn retry_policy_retries_transport_only() {
        let calls = Mutex::new(0u32);
        let result: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            *calls.lock().unwrap() += 1;
            Err(SourceError::Transport {
                detail: "down".into(),
            })
        });
        assert!(result.is_err());
        assert_eq!(*calls.lock().unwrap(), 3);

        let calls = Mutex::new(0u32);
        let result: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            *calls.lock().unwrap() += 1;
            Err(SourceError::Missing { api: "x".into() })
        });
        assert!(result.is_err());
        assert_eq!(*calls.lock().unwrap(), 1, "missing must not retry");
    }

    #[test]
    fn retry_policy_recovers_after_failures() {
        let calls = Mutex::new(0u32);
        let result = RetryPolicy::immediate(3).run(|| {
            let mut n = calls.lock().unwrap();
            *n += 1;
            if *n < 3 {
                Err(SourceError::Transport { detail: "x".into() })
            } else {
                Ok(*n)
            }
        });
        assert_eq!(result.unwrap(), 3);
    }

    #[test]
    fn stub_source_is_deterministic() {
        let api = ApiCall::new("NtOpenFile").unwrap();
        let stub = StubLlmSource;
        let a = stub.fetch(&api, "p").unwrap();
        let b = stub.fetch(&api, "p").unwrap();
        assert_eq!(a, b);
    }
}
