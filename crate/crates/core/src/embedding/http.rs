use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, Modality, Space};
use crate::backend::{http_error, status_error};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: Vec<String>,
    modality: Modality,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

/// JSON-over-HTTP embedding service.
///
/// `POST {model, input: [base64-image | text], modality}` answered by
/// `{data: [{embedding: [...]}]}`, one entry per input in order.
pub struct HttpEmbeddingBackend {
    id: String,
    endpoint: String,
    model_id: String,
    dim: usize,
    space: Space,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingBackend {
    pub fn new(endpoint: String, model_id: String, dim: usize, space: Space, timeout_s: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpEmbeddingBackend {
            id: format!("http-{}-{}", space.tag(), model_id),
            endpoint,
            model_id,
            dim,
            space,
            client,
        })
    }

    fn post(&self, input: Vec<String>, modality: Modality) -> Result<Vec<Vec<f32>>> {
        let expected = input.len();
        let body = EmbedRequest {
            model: &self.model_id,
            input,
            modality,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| http_error(&self.id, e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| http_error(&self.id, e))?;
        if !status.is_success() {
            return Err(status_error(&self.id, status, &text));
        }
        let parsed: EmbedResponse = serde_json::from_str(&text)
            .map_err(|e| Error::backend(&self.id, format!("malformed response: {e}"), false))?;
        if parsed.data.len() != expected {
            return Err(Error::backend(
                &self.id,
                format!("expected {expected} embeddings, got {}", parsed.data.len()),
                false,
            ));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn space(&self) -> Space {
        self.space
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_images(&self, images: &[&[u8]]) -> Result<Vec<Vec<f32>>> {
        self.post(images.iter().map(|b| BASE64.encode(b)).collect(), Modality::Image)
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        if self.space == Space::Frame {
            return Err(Error::Config("frame-space backend cannot embed text".into()));
        }
        self.post(texts.iter().map(|t| t.to_string()).collect(), Modality::Text)
    }
}
