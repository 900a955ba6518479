use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use vidsum_core::backend::RetryPolicy;
use vidsum_core::chat::{ChatBackend, ChatClient, ChatRequest, HttpChatBackend};
use vidsum_core::embedding::{Embedder, EmbeddingBackend, HttpEmbeddingBackend, Space};
use vidsum_core::Error;

struct Seen {
    body: Value,
    auth: Option<String>,
}

/// Serves `replies` in order, one per request, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let mut req = server.recv().unwrap();
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            log.lock().unwrap().push(Seen {
                body: serde_json::from_str(&text).unwrap(),
                auth,
            });
            let header = Header::from_bytes("Content-Type", "application/json").unwrap();
            req.respond(Response::from_string(body).with_status_code(status).with_header(header))
                .unwrap();
        }
    });
    (url, seen, handle)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn embedding_request_shape_and_response() {
    let reply = json!({"data": [{"embedding": [1.0, 0.0, 0.0]}, {"embedding": [0.0, 2.0, 0.0]}]});
    let (url, seen, h) = serve(vec![(200, reply.to_string())]);
    let b = HttpEmbeddingBackend::new(url, "clip".into(), 3, Space::Joint, 5).unwrap();
    let out = b.embed_images(&[b"ab", b"\xff"]).unwrap();
    h.join().unwrap();
    assert_eq!(out, vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]);
    let body = &seen.lock().unwrap()[0].body;
    assert_eq!(body["model"], "clip");
    assert_eq!(body["modality"], "image");
    assert_eq!(body["input"], json!(["YWI=", "/w=="]));
}

#[test]
fn embedding_count_mismatch_is_fatal() {
    let reply = json!({"data": [{"embedding": [1.0, 0.0]}]});
    let (url, _, h) = serve(vec![(200, reply.to_string())]);
    let b = HttpEmbeddingBackend::new(url, "clip".into(), 2, Space::Joint, 5).unwrap();
    let err = b.embed_texts(&["a", "b"]).unwrap_err();
    h.join().unwrap();
    assert!(!err.is_retryable(), "{err}");
}

#[test]
fn embedder_retries_server_errors() {
    let ok = json!({"data": [{"embedding": [0.6, 0.8]}]}).to_string();
    let (url, seen, h) = serve(vec![(503, "busy".into()), (200, ok)]);
    let b = HttpEmbeddingBackend::new(url, "clip".into(), 2, Space::Joint, 5).unwrap();
    let e = Embedder::new(Arc::new(b)).with_retry(RetryPolicy::no_delay(3));
    let v = e.embed_text("stir the sauce").unwrap();
    h.join().unwrap();
    assert_eq!(v.values(), &[0.6, 0.8]);
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert_eq!(seen.lock().unwrap()[1].body["modality"], "text");
}

#[test]
fn chat_sends_image_as_data_url_with_bearer_key() {
    let (url, seen, h) = serve(vec![(200, completion("a pan on a stove"))]);
    let b = HttpChatBackend::new(url, "vlm".into(), 0.0, Some(32), Some("k3y".into()), 5).unwrap();
    let reply = b.complete(&ChatRequest::with_image("Describe.", b"ab".to_vec())).unwrap();
    h.join().unwrap();
    assert_eq!(reply, "a pan on a stove");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer k3y"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "vlm");
    assert_eq!(body["max_tokens"], 32);
    let content = &body["messages"][0]["content"];
    assert_eq!(content[0], json!({"type": "text", "text": "Describe."}));
    assert_eq!(content[1]["image_url"]["url"], "data:image/jpeg;base64,YWI=");
}

#[test]
fn chat_client_retries_then_caches() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen, h) = serve(vec![(429, "slow down".into()), (200, completion("1"))]);
    let b = HttpChatBackend::new(url, "llm".into(), 0.0, None, None, 5).unwrap();
    let client = ChatClient::new(Arc::new(b))
        .with_retry(RetryPolicy::no_delay(2))
        .with_cache(dir.path());
    let req = ChatRequest::text("Is this a step?");
    assert_eq!(client.complete(&req).unwrap().text, "1");
    h.join().unwrap();
    // Served from the cache; the server thread has already exited.
    assert_eq!(client.complete(&req).unwrap().text, "1");
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert!(seen.lock().unwrap()[0].auth.is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, h) = serve(vec![(400, "bad request".into())]);
    let b = HttpChatBackend::new(url, "llm".into(), 0.0, None, None, 5).unwrap();
    let client = ChatClient::new(Arc::new(b)).with_retry(RetryPolicy::no_delay(3));
    let err = client.complete(&ChatRequest::text("x")).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, Error::Backend { retryable: false, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_retryable() {
    let b = HttpChatBackend::new("http://127.0.0.1:9/v1".into(), "llm".into(), 0.0, None, None, 2).unwrap();
    let err = b.complete(&ChatRequest::text("x")).unwrap_err();
    assert!(err.is_retryable(), "{err}");
}
