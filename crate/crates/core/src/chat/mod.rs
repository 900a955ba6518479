//! Chat-completion backends (vision-language and text-only) behind a caching,
//! retrying client.

mod http;
mod mock;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{map_bounded, CallLog, CallRecord, RetryPolicy};
use crate::error::{Error, Result};
use crate::prompts::RenderedPrompt;
use crate::util;

pub use http::HttpChatBackend;
pub use mock::{MockChatBackend, MockFallback, MockFixtures, MockRule};

/// One user turn: rendered prompt text plus at most one JPEG image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub prompt: String,
    pub image: Option<Vec<u8>>,
}

impl ChatRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            image: None,
        }
    }

    pub fn with_image(prompt: impl Into<String>, image: Vec<u8>) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            image: Some(image),
        }
    }

    pub fn from_prompt(prompt: &RenderedPrompt, image: Option<Vec<u8>>) -> Self {
        ChatRequest {
            prompt: prompt.text.clone(),
            image,
        }
    }

    pub fn prompt_hash(&self) -> String {
        util::sha256_hex(self.prompt.as_bytes())
    }

    pub fn image_hash(&self) -> Option<String> {
        self.image.as_deref().map(util::sha256_hex)
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatBackendKind {
    HttpChat,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBackendConfig {
    pub kind: ChatBackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    /// Name of an environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Mock only: JSON rule file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_model_id() -> String {
    "default".to_string()
}

fn default_max_inflight() -> usize {
    4
}

fn default_timeout_s() -> u64 {
    300
}

impl ChatBackendConfig {
    pub fn mock(fixtures: impl Into<PathBuf>) -> Self {
        ChatBackendConfig {
            kind: ChatBackendKind::Mock,
            endpoint: None,
            model_id: "mock".to_string(),
            temperature: 0.0,
            max_inflight: default_max_inflight(),
            max_tokens: None,
            api_key_env: None,
            fixtures: Some(fixtures.into()),
            timeout_s: default_timeout_s(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "chat temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_inflight == 0 {
            return Err(Error::Config("chat max_inflight must be positive".into()));
        }
        match self.kind {
            ChatBackendKind::HttpChat if self.endpoint.is_none() => {
                Err(Error::Config("http-chat backend requires an endpoint".into()))
            }
            ChatBackendKind::Mock if self.fixtures.is_none() => {
                Err(Error::Config("mock chat backend requires a fixture path".into()))
            }
            _ => Ok(()),
        }
    }

    /// Relative fixture paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Arc<dyn ChatBackend>> {
        self.validate()?;
        Ok(match self.kind {
            ChatBackendKind::Mock => {
                let path = self.fixtures.as_ref().expect("validated");
                let path = if path.is_absolute() { path.clone() } else { base.join(path) };
                Arc::new(MockChatBackend::new(MockFixtures::load(&path)?, &self.model_id))
            }
            ChatBackendKind::HttpChat => {
                let api_key = match &self.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Arc::new(HttpChatBackend::new(
                    self.endpoint.clone().unwrap_or_default(),
                    self.model_id.clone(),
                    self.temperature,
                    self.max_tokens,
                    api_key,
                    self.timeout_s,
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_hash: String,
    pub cached: bool,
}

/// Caching, retrying front end. Replies are cached under
/// `(prompt hash, image hash, model id)`.
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    cache_dir: Option<PathBuf>,
    retry: RetryPolicy,
    max_inflight: usize,
    log: Arc<CallLog>,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        ChatClient {
            backend,
            cache_dir: None,
            retry: RetryPolicy::default(),
            max_inflight: default_max_inflight(),
            log: Arc::new(CallLog::default()),
        }
    }

    pub fn with_cache(mut self, cache_root: &Path) -> Self {
        self.cache_dir = Some(cache_root.join("chat"));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_inflight(mut self, max_inflight: usize) -> Self {
        self.max_inflight = max_inflight.max(1);
        self
    }

    pub fn with_call_log(mut self, log: Arc<CallLog>) -> Self {
        self.log = log;
        self
    }

    pub fn call_log(&self) -> &Arc<CallLog> {
        &self.log
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn max_inflight(&self) -> usize {
        self.max_inflight
    }

    pub fn cache_key(&self, request: &ChatRequest) -> String {
        let image = request.image_hash().unwrap_or_default();
        util::sha256_parts(&[
            request.prompt_hash().as_bytes(),
            image.as_bytes(),
            self.backend.model_id().as_bytes(),
        ])
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        let key = self.cache_key(request);
        let cache_path = self.cache_dir.as_ref().map(|d| d.join(format!("{key}.txt")));
        let cached = match &cache_path {
            Some(p) if p.is_file() => Some(
                std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            ),
            _ => None,
        };
        let (text, was_cached) = match cached {
            Some(text) => (text, true),
            None => {
                let text = self.retry.run(|_| {
                    self.log.count_live_call();
                    self.backend.complete(request)
                })?;
                if let Some(p) = &cache_path {
                    util::write_atomic(p, text.as_bytes())?;
                }
                (text, false)
            }
        };
        self.log.record(CallRecord {
            backend: self.backend.id().to_string(),
            request_sha256: key,
            response_sha256: util::sha256_hex(text.as_bytes()),
        });
        Ok(ChatReply {
            text,
            prompt_hash: request.prompt_hash(),
            cached: was_cached,
        })
    }

    /// Runs requests with bounded concurrency; results keep input order.
    pub fn complete_many(&self, requests: &[ChatRequest]) -> Vec<Result<ChatReply>> {
        map_bounded(requests, self.max_inflight, |r| self.complete(r))
    }
}
