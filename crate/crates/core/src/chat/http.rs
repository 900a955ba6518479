use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest};
use crate::backend::{http_error, status_error};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    messages: Vec<Message>,
}

#[derive(Debug, Serialize)]
struct Message {
    role: &'static str,
    content: Vec<ContentPart>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Serialize)]
struct ImageUrl {
    url: String,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions endpoint. Images travel as JPEG data URLs.
pub struct HttpChatBackend {
    id: String,
    endpoint: String,
    model_id: String,
    temperature: f64,
    max_tokens: Option<u32>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(
        endpoint: String,
        model_id: String,
        temperature: f64,
        max_tokens: Option<u32>,
        api_key: Option<String>,
        timeout_s: u64,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpChatBackend {
            id: format!("http-chat-{model_id}"),
            endpoint,
            model_id,
            temperature,
            max_tokens,
            api_key,
            client,
        })
    }

    fn body(&self, request: &ChatRequest) -> CompletionRequest<'_> {
        let mut content = vec![ContentPart::Text {
            text: request.prompt.clone(),
        }];
        if let Some(image) = &request.image {
            content.push(ContentPart::ImageUrl {
                image_url: ImageUrl {
                    url: format!("data:image/jpeg;base64,{}", BASE64.encode(image)),
                },
            });
        }
        CompletionRequest {
            model: &self.model_id,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages: vec![Message {
                role: "user",
                content,
            }],
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut builder = self.client.post(&self.endpoint).json(&self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| http_error(&self.id, e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| http_error(&self.id, e))?;
        if !status.is_success() {
            return Err(status_error(&self.id, status, &text));
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| Error::backend(&self.id, format!("malformed response: {e}"), false))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::backend(&self.id, "response has no message content", false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let b = HttpChatBackend::new("http://x".into(), "vlm".into(), 0.0, Some(64), None, 5).unwrap();
        let v = serde_json::to_value(b.body(&ChatRequest::with_image("look", vec![0xff, 0xd8]))).unwrap();
        assert_eq!(v["model"], "vlm");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["max_tokens"], 64);
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"][0]["type"], "text");
        assert_eq!(v["messages"][0]["content"][0]["text"], "look");
        assert_eq!(v["messages"][0]["content"][1]["type"], "image_url");
        assert_eq!(v["messages"][0]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,/9g=");
        let v = serde_json::to_value(b.body(&ChatRequest::text("t"))).unwrap();
        assert_eq!(v["messages"][0]["content"].as_array().unwrap().len(), 1);
        assert!(v.get("max_tokens").is_some());
    }
}
