use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::egises::read_jsonl;
use crate::error::Result;
use crate::oracles::{OracleContext, OracleModel};
use crate::promptforge::RenderedPrompt;

/// Failure of a single completion attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterError {
    /// Worth retrying: network errors, 429 and 5xx responses.
    Transient(String),
    /// Recorded as a failed generation.
    Permanent(String),
}

impl std::fmt::Display for AdapterError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdapterError::Transient(m) => write!(f, "transient: {m}"),
            AdapterError::Permanent(m) => write!(f, "permanent: {m}"),
        }
    }
}

pub trait CompletionAdapter: Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> std::result::Result<String, AdapterError>;
}

/// Decoding settings forwarded to the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_k: 16,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybackEntry {
    pub prompt_id: String,
    #[serde(default)]
    pub model_id: Option<String>,
    pub raw_completion: String,
}

/// Serves completions recorded earlier, keyed by prompt id.
#[derive(Debug, Clone, Default)]
pub struct PlaybackAdapter {
    completions: HashMap<String, String>,
}

impl PlaybackAdapter {
    pub fn new(entries: impl IntoIterator<Item = PlaybackEntry>) -> Self {
        Self {
            completions: entries.into_iter().map(|e| (e.prompt_id, e.raw_completion)).collect(),
        }
    }

    /// Load a playback file, keeping entries for `model_id` or without a model.
    pub fn load(path: &Path, model_id: &str) -> Result<Self> {
        let entries: Vec<PlaybackEntry> = read_jsonl(path)?;
        Ok(Self::new(
            entries
                .into_iter()
                .filter(|e| e.model_id.as_deref().is_none_or(|m| m == model_id)),
        ))
    }
}

impl CompletionAdapter for PlaybackAdapter {
    fn complete(&self, prompt: &RenderedPrompt) -> std::result::Result<String, AdapterError> {
        self.completions
            .get(&prompt.prompt_id)
            .cloned()
            .ok_or_else(|| AdapterError::Permanent(format!("missing playback key {}", prompt.prompt_id)))
    }
}

#[derive(Debug, Serialize)]
struct HttpRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_k: u32,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct HttpReply {
    text: String,
}

/// POSTs `{model, prompt, temperature, top_k, max_tokens}` and expects `{text}`.
pub struct HttpJsonAdapter {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    decoding: Decoding,
}

impl HttpJsonAdapter {
    pub fn new(endpoint: &str, model: &str, decoding: Decoding, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            decoding,
        }
    }
}

impl CompletionAdapter for HttpJsonAdapter {
    fn complete(&self, prompt: &RenderedPrompt) -> std::result::Result<String, AdapterError> {
        let body = HttpRequest {
            model: &self.model,
            prompt: &prompt.text,
            temperature: self.decoding.temperature,
            top_k: self.decoding.top_k,
            max_tokens: self.decoding.max_tokens,
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| AdapterError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AdapterError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(AdapterError::Permanent(format!("HTTP {status}: {}", detail.trim())));
        }
        response
            .body_mut()
            .read_json::<HttpReply>()
            .map(|r| r.text)
            .map_err(|e| AdapterError::Permanent(format!("unreadable reply: {e}")))
    }
}

/// Runs an oracle summarizer in place of a model.
pub struct OracleAdapter<'a> {
    pub model: OracleModel,
    pub context: OracleContext<'a>,
}

impl CompletionAdapter for OracleAdapter<'_> {
    fn complete(&self, prompt: &RenderedPrompt) -> std::result::Result<String, AdapterError> {
        self.model
            .complete(prompt, &self.context)
            .map_err(|e| AdapterError::Permanent(e.to_string()))
    }
}
