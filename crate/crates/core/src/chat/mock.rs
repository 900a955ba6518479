use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest};
use crate::error::{Error, Result};
use crate::util;

/// One fixture rule. All present matchers must hold; a rule without matchers
/// matches every request. Exactly one of `reply` or `error` is expected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Simulated backend failure (retryable).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockRule {
    fn matches(&self, request: &ChatRequest) -> bool {
        if let Some(want) = &self.image_sha256 {
            if request.image_hash().as_deref() != Some(want.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.prompt_contains {
            if !request.prompt.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(want) = &self.prompt_sha256 {
            if &request.prompt_hash() != want {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockFallback {
    /// A short reply derived from the request digest.
    #[default]
    Digest,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixtures {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: MockFallback,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self> {
        let fixtures: MockFixtures = util::read_json(path)?;
        for (i, rule) in fixtures.rules.iter().enumerate() {
            if rule.reply.is_some() == rule.error.is_some() {
                return Err(Error::Config(format!(
                    "{}: rule {i} needs exactly one of reply or error",
                    path.display()
                )));
            }
        }
        Ok(fixtures)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }
}

/// Rule-driven, fully deterministic chat backend for tests and offline runs.
pub struct MockChatBackend {
    id: String,
    model_id: String,
    fixtures: MockFixtures,
}

impl MockChatBackend {
    pub fn new(fixtures: MockFixtures, model_id: &str) -> Self {
        MockChatBackend {
            id: format!("mock-chat-{model_id}"),
            model_id: model_id.to_string(),
            fixtures,
        }
    }
}

impl ChatBackend for MockChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        if let Some(rule) = self.fixtures.rules.iter().find(|r| r.matches(request)) {
            return match (&rule.reply, &rule.error) {
                (Some(reply), _) => Ok(reply.clone()),
                (None, Some(err)) => Err(Error::backend(&self.id, err.clone(), true)),
                (None, None) => Err(Error::backend(&self.id, "rule has no reply", false)),
            };
        }
        match self.fixtures.fallback {
            MockFallback::Digest => {
                let image = request.image.as_deref().unwrap_or_default();
                let digest = util::sha256_parts(&[request.prompt.as_bytes(), image]);
                Ok(format!("mock reply {}", &digest[..16]))
            }
            MockFallback::Error => Err(Error::backend(&self.id, "no fixture matches request", false)),
        }
    }
}
