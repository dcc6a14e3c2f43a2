//! Clients for the three backend kinds over the JSON wire contract:
//!
//! | path           | request                                   | response                |
//! |----------------|-------------------------------------------|-------------------------|
//! | `/v1/classify` | `{image_b64, labels}`                     | `{scores}`              |
//! | `/v1/generate` | `{image_b64, prompt}`                     | `{text}`                |
//! | `/v1/detect`   | `{image_b64, queries, score_threshold}`   | `{detections: [{box, query_index, score}]}` |
//!
//! Every call goes through a [`Transport`], which is either a live HTTP
//! client, a recorder wrapped around one, a replay store, or the
//! deterministic [`mock::MockFixture`].

pub mod http;
pub mod mock;
pub mod record;

use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{BoundingBox, ScoredDetection};

pub use http::HttpTransport;
pub use mock::{MockFixture, MockTransport};
pub use record::{BackendExchange, RecordSink, RecordStore, RecordingTransport, ReplayTransport};

pub const CLASSIFY_PATH: &str = "/v1/classify";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const DETECT_PATH: &str = "/v1/detect";
pub const HEALTH_PATH: &str = "/health";

/// Environment variable holding an optional bearer token for live endpoints.
pub const TOKEN_ENV: &str = "VLMEVAL_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} from {path}: {body}")]
    Status { path: String, status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("replay miss: no recorded exchange for {path} with digest {digest}")]
    ReplayMiss { path: String, digest: String },
    #[error("mock fixture has no response for {path} with digest {digest}")]
    MockMiss { path: String, digest: String },
    /// A failure captured in a record store, replayed verbatim.
    #[error("{0}")]
    Recorded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    SimilarityClassifier,
    VisualChat,
    OpenVocabDetector,
}

impl BackendKind {
    fn path(self) -> &'static str {
        match self {
            BackendKind::SimilarityClassifier => CLASSIFY_PATH,
            BackendKind::VisualChat => GENERATE_PATH,
            BackendKind::OpenVocabDetector => DETECT_PATH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: BackendKind,
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub initial_backoff: Duration,
}

impl BackendEndpoint {
    pub fn new(kind: BackendKind, base_url: impl Into<String>) -> Self {
        Self {
            kind,
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, max_retries: u32, initial_backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.initial_backoff = initial_backoff;
        self
    }
}

/// A response body and the client-side latency of producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub body: Value,
    pub latency_ms: f64,
}

#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError>;
}

/// Compact JSON with object keys sorted at every level. Numbers use
/// serde_json's shortest round-trip formatting.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// SHA-256 over `"<path>\n<canonical request>"`, hex encoded.
pub fn request_digest(path: &str, request: &Value) -> String {
    let mut h = Sha256::new();
    h.update(path.as_bytes());
    h.update(b"\n");
    h.update(canonical_json(request).as_bytes());
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_image(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_image(b64: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(b64).map_err(|e| BackendError::Protocol(format!("image_b64 is not base64: {e}")))
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    image::ImageReader::new(Cursor::new(bytes)).with_guessed_format().ok()?.into_dimensions().ok()
}

/// A value produced by a backend call, with its latency.
#[derive(Debug, Clone, PartialEq)]
pub struct Timed<T> {
    pub value: T,
    pub latency_ms: f64,
}

/// Typed access to one endpoint kind over any transport.
#[derive(Clone)]
pub struct BackendClient {
    kind: BackendKind,
    transport: Arc<dyn Transport>,
}

impl std::fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendClient").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl BackendClient {
    pub fn new(kind: BackendKind, transport: Arc<dyn Transport>) -> Self {
        Self { kind, transport }
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    fn require(&self, kind: BackendKind) -> Result<(), BackendError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(BackendError::Precondition(format!(
                "{} needs a {kind:?} endpoint, this one is {:?}",
                kind.path(),
                self.kind
            )))
        }
    }

    /// One score per label, in label order.
    pub async fn classify(&self, image: &[u8], labels: &[&str]) -> Result<Timed<Vec<f64>>, BackendError> {
        self.require(BackendKind::SimilarityClassifier)?;
        if labels.is_empty() {
            return Err(BackendError::Precondition("classify needs at least one label".into()));
        }
        let req = json!({ "image_b64": encode_image(image), "labels": labels });
        let reply = self.transport.send(CLASSIFY_PATH, &req).await?;
        let scores: Vec<f64> = field(&reply.body, "scores")?;
        if scores.len() != labels.len() {
            return Err(BackendError::Protocol(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(BackendError::Protocol(format!("score {s} outside [0, 1]")));
        }
        Ok(Timed { value: scores, latency_ms: reply.latency_ms })
    }

    pub async fn generate(&self, image: &[u8], prompt: &str) -> Result<Timed<String>, BackendError> {
        self.require(BackendKind::VisualChat)?;
        let req = json!({ "image_b64": encode_image(image), "prompt": prompt });
        let reply = self.transport.send(GENERATE_PATH, &req).await?;
        let text: String = field(&reply.body, "text")?;
        if text.trim().is_empty() {
            return Err(BackendError::Protocol("empty text in generate response".into()));
        }
        Ok(Timed { value: text, latency_ms: reply.latency_ms })
    }

    /// Detections whose `class_index` points into `queries`, filtered to
    /// `score >= score_threshold`. Boxes must lie inside the image.
    pub async fn detect(
        &self,
        image: &[u8],
        queries: &[&str],
        score_threshold: f64,
    ) -> Result<Timed<Vec<ScoredDetection>>, BackendError> {
        self.require(BackendKind::OpenVocabDetector)?;
        if queries.is_empty() {
            return Err(BackendError::Precondition("detect needs at least one query".into()));
        }
        let (w, h) =
            image_dimensions(image).ok_or_else(|| BackendError::Precondition("cannot read image dimensions".into()))?;
        let req = json!({
            "image_b64": encode_image(image),
            "queries": queries,
            "score_threshold": score_threshold,
        });
        let reply = self.transport.send(DETECT_PATH, &req).await?;
        let raw: Vec<WireDetection> = field(&reply.body, "detections")?;
        let mut out = Vec::with_capacity(raw.len());
        for d in raw {
            if d.query_index >= queries.len() {
                return Err(BackendError::Protocol(format!(
                    "query_index {} out of range for {} queries",
                    d.query_index,
                    queries.len()
                )));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(BackendError::Protocol(format!("score {} outside [0, 1]", d.score)));
            }
            let [x0, y0, x1, y1] = d.bbox;
            let bbox = BoundingBox::new(x0, y0, x1, y1).map_err(|e| BackendError::Protocol(e.to_string()))?;
            if x1 > f64::from(w) || y1 > f64::from(h) {
                return Err(BackendError::Protocol(format!("box {:?} exceeds the {w}x{h} image", d.bbox)));
            }
            if d.score >= score_threshold {
                out.push(ScoredDetection::new(bbox, d.query_index, d.score));
            }
        }
        Ok(Timed { value: out, latency_ms: reply.latency_ms })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub query_index: usize,
    pub score: f64,
}

fn field<T: serde::de::DeserializeOwned>(body: &Value, name: &str) -> Result<T, BackendError> {
    let v = body.get(name).ok_or_else(|| BackendError::Protocol(format!("response has no {name:?} field")))?;
    serde_json::from_value(v.clone()).map_err(|e| BackendError::Protocol(format!("bad {name:?}: {e}")))
}
