//! OpenAI-compatible chat-completions backend.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Map, Value as Json};

use super::schema::build_json_schema;
use super::{PredictRequest, PredictResponse, Predictor, Usage};
use crate::catalog::{ModelEntry, Secret, SecretStore};
use crate::error::{BackendError, Error, Result};
use crate::predict::{RenderKind, StructuredOutputMode};
use crate::sql::OptionValue;

#[derive(Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl fmt::Debug for HttpRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers: Vec<(&str, &str)> = self
            .headers
            .iter()
            .map(|(k, v)| (k.as_str(), if k.eq_ignore_ascii_case("authorization") { "***" } else { v.as_str() }))
            .collect();
        f.debug_struct("HttpRequest")
            .field("url", &self.url)
            .field("headers", &headers)
            .field("body", &self.body)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout(String),
    Connect(String),
}

pub trait HttpTransport: Send + Sync {
    fn post(&self, req: &HttpRequest, timeout: Duration) -> std::result::Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post(&self, req: &HttpRequest, timeout: Duration) -> std::result::Result<HttpResponse, TransportError> {
        let mut builder = self.client.post(&req.url).timeout(timeout).body(req.body.clone());
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(e.without_url().to_string())
            } else {
                TransportError::Connect(e.without_url().to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Connect(e.without_url().to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Interaction {
    /// When present, the request body must equal this JSON value.
    #[serde(default)]
    request: Option<Json>,
    #[serde(default)]
    response: Option<CassetteResponse>,
    #[serde(default)]
    timeout: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct CassetteResponse {
    status: u16,
    body: Json,
}

/// Replays recorded HTTP exchanges in order, for offline tests.
/// Requests are recorded without their authorization header.
#[derive(Debug)]
pub struct CassetteTransport {
    interactions: Vec<Interaction>,
    next: AtomicUsize,
    seen: Mutex<Vec<HttpRequest>>,
}

impl CassetteTransport {
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            interactions: Vec<Interaction>,
        }
        let f: File = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad cassette: {e}")))?;
        Ok(CassetteTransport { interactions: f.interactions, next: AtomicUsize::new(0), seen: Mutex::new(Vec::new()) })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read cassette {}: {e}", path.display())))?;
        CassetteTransport::parse(&text)
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.seen.lock().expect("cassette lock").clone()
    }

    /// Recorded interactions not yet replayed.
    pub fn remaining(&self) -> usize {
        self.interactions.len().saturating_sub(self.next.load(Ordering::SeqCst))
    }
}

impl HttpTransport for CassetteTransport {
    fn post(&self, req: &HttpRequest, _timeout: Duration) -> std::result::Result<HttpResponse, TransportError> {
        let mut stored = req.clone();
        stored.headers.retain(|(k, _)| !k.eq_ignore_ascii_case("authorization"));
        stored.headers.push((
            "x-has-bearer".into(),
            req.headers
                .iter()
                .any(|(k, v)| k.eq_ignore_ascii_case("authorization") && v.starts_with("Bearer "))
                .to_string(),
        ));
        self.seen.lock().expect("cassette lock").push(stored);

        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let it = self
            .interactions
            .get(i)
            .ok_or_else(|| TransportError::Connect(format!("cassette exhausted after {i} requests")))?;
        if let Some(expected) = &it.request {
            let actual: Json = serde_json::from_str(&req.body).unwrap_or(Json::Null);
            if &actual != expected {
                return Ok(HttpResponse {
                    status: 400,
                    body: format!("cassette request {i} does not match the recording"),
                });
            }
        }
        if it.timeout {
            return Err(TransportError::Timeout("recorded timeout".into()));
        }
        let r = it
            .response
            .as_ref()
            .ok_or_else(|| TransportError::Connect(format!("cassette entry {i} has no response")))?;
        let body = match &r.body {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        };
        Ok(HttpResponse { status: r.status, body })
    }
}

/// `…/v1` gets `/chat/completions`; any other base gets `/v1/chat/completions`.
pub fn completions_url(base: &str) -> String {
    let b = base.trim_end_matches('/');
    if b.ends_with("/v1") {
        format!("{b}/chat/completions")
    } else {
        format!("{b}/v1/chat/completions")
    }
}

fn option_json(v: &OptionValue) -> Json {
    match v {
        OptionValue::Bool(b) => json!(b),
        OptionValue::Int(i) => json!(i),
        OptionValue::Float(f) => json!(f),
        OptionValue::Str(s) => json!(s),
    }
}

pub struct RemotePredictor {
    name: String,
    path: String,
    url: String,
    secret: Secret,
    transport: Arc<dyn HttpTransport>,
}

impl fmt::Debug for RemotePredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemotePredictor").field("name", &self.name).field("url", &self.url).finish_non_exhaustive()
    }
}

impl RemotePredictor {
    /// Fails with a configuration error, before any request, when the model
    /// has no API URL or its secret does not resolve.
    pub fn new(entry: &ModelEntry, secrets: &SecretStore, transport: Arc<dyn HttpTransport>) -> Result<Self> {
        let base = entry.base_api.as_deref().ok_or_else(|| {
            Error::Backend(BackendError::config(format!("model {} has no API URL for the remote backend", entry.name)))
        })?;
        let secret_name = entry.secret.as_deref().unwrap_or(&entry.name);
        let secret = secrets
            .resolve(secret_name)
            .map_err(|e| Error::Backend(BackendError::config(format!("model {}: {e}", entry.name))))?;
        Ok(RemotePredictor {
            name: entry.name.clone(),
            path: entry.path.clone(),
            url: completions_url(base),
            secret,
            transport,
        })
    }

    /// The JSON request body. Keys serialize in sorted order, so the body
    /// is byte-stable for fixed inputs.
    pub fn request_body(&self, req: &PredictRequest<'_>) -> String {
        build_request_body(&self.path, req)
    }

    fn redact(&self, text: &str) -> String {
        let s = self.secret.expose();
        if s.is_empty() {
            text.to_string()
        } else {
            text.replace(s, "***")
        }
    }
}

pub fn build_request_body(model_path: &str, req: &PredictRequest<'_>) -> String {
    let mut body = Map::new();
    for (k, v) in &req.config.kwargs {
        body.insert(k.clone(), option_json(v));
    }
    body.insert("model".into(), json!(model_path));
    body.insert(
        "messages".into(),
        json!([
            {"role": "system", "content": req.prompt.system},
            {"role": "user", "content": req.prompt.user},
        ]),
    );
    if let Some(t) = req.config.temperature {
        body.insert("temperature".into(), json!(t));
    }
    if req.config.structured_output == StructuredOutputMode::JsonSchemaParam {
        let with_row_id = !matches!(req.kind, RenderKind::Generation { .. });
        body.insert(
            "response_format".into(),
            json!({
                "type": "json_schema",
                "json_schema": {"name": "predictions", "schema": build_json_schema(req.outputs, with_row_id)},
            }),
        );
    }
    Json::Object(body).to_string()
}

fn parse_completion(body: &str) -> std::result::Result<(String, Option<Usage>), BackendError> {
    let v: Json =
        serde_json::from_str(body).map_err(|e| BackendError::retryable(format!("unreadable completion: {e}")))?;
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::retryable("completion has no message content"))?
        .to_string();
    let usage = v.get("usage").and_then(|u| {
        Some(Usage {
            input_tokens: u.get("prompt_tokens")?.as_u64()?,
            output_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((content, usage))
}

fn snippet(s: &str) -> String {
    let mut out: String = s.chars().take(200).collect();
    if s.chars().count() > 200 {
        out.push_str("...");
    }
    out
}

impl Predictor for RemotePredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError> {
        let http = HttpRequest {
            url: self.url.clone(),
            headers: vec![
                ("Content-Type".into(), "application/json".into()),
                ("Authorization".into(), format!("Bearer {}", self.secret.expose())),
            ],
            body: self.request_body(req),
        };
        let timeout = Duration::from_millis(req.config.timeout_ms);
        let mut retries: u32 = 0;
        loop {
            log::debug!("POST {} model={} bytes={}", self.url, self.path, http.body.len());
            let failure = match self.transport.post(&http, timeout) {
                Ok(r) if (200..300).contains(&r.status) => {
                    let (content, usage) = parse_completion(&r.body)?;
                    return Ok(PredictResponse {
                        output: super::PredictOutput::Text(content),
                        usage,
                        transport_retries: retries,
                    });
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    format!("HTTP {} from {}: {}", r.status, self.url, self.redact(&snippet(&r.body)))
                }
                Ok(r) => {
                    return Err(BackendError::permanent(format!(
                        "HTTP {} from {}: {}",
                        r.status,
                        self.url,
                        self.redact(&snippet(&r.body))
                    )))
                }
                Err(TransportError::Timeout(m)) => {
                    format!("timeout after {} ms: {}", req.config.timeout_ms, self.redact(&m))
                }
                Err(TransportError::Connect(m)) => return Err(BackendError::retryable(self.redact(&m))),
            };
            if retries >= req.config.max_retries {
                return Err(BackendError::retryable(failure));
            }
            log::warn!("{} (retrying)", failure);
            let backoff = req.config.retry_backoff_ms.saturating_mul(1 << retries.min(16));
            if backoff > 0 {
                thread::sleep(Duration::from_millis(backoff));
            }
            retries += 1;
        }
    }
}
