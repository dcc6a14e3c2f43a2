//! Deterministic stand-in backend driven by a JSON fixture.
//!
//! Fixture entries are keyed by image content (SHA-256 of the bytes sent in
//! `image_b64`). An entry names its image either by path (relative to the
//! fixture file), by path plus a crop box (the crop is re-encoded exactly as
//! the crop-chat pipeline does), or by a literal hash.
//!
//! ```json
//! {
//!   "latency_ms": 12.5,
//!   "entries": [
//!     { "image": "img/0.png", "classify": { "class_index": 0 } },
//!     { "image": "img/1.png", "crop": [10, 10, 40, 80],
//!       "generate": [ { "prompt_contains": "Write no", "text": "yes" },
//!                     { "text": "A rider with a helmet." } ] },
//!     { "image": "img/1.png",
//!       "detect": [ { "query": "person", "box": [10, 10, 40, 80], "score": 0.9 } ] }
//!   ]
//! }
//! ```
//!
//! Rules:
//! - classify: `class_index` gets 0.9, the remaining labels share 0.1.
//! - generate: the first rule whose `prompt_contains` occurs in the prompt
//!   (or that has none) supplies the text.
//! - detect: detections whose `query` equals a requested query
//!   (case-insensitive) and whose score reaches the threshold.
//!
//! Anything not covered is a [`BackendError::MockMiss`] carrying the request
//! digest.

use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    decode_image, request_digest, sha256_hex, BackendError, Reply, Transport, WireDetection, CLASSIFY_PATH,
    DETECT_PATH, GENERATE_PATH,
};
use crate::geometry::BoundingBox;
use crate::image_ops::crop_png;

#[derive(Debug, Clone, Deserialize)]
pub struct ClassifyRule {
    pub class_index: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GenerateRule {
    #[serde(default)]
    pub prompt_contains: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockDetection {
    pub query: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MockEntry {
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub crop: Option<[f64; 4]>,
    #[serde(default)]
    pub image_sha256: Option<String>,
    #[serde(default)]
    pub classify: Option<ClassifyRule>,
    #[serde(default)]
    pub generate: Vec<GenerateRule>,
    #[serde(default)]
    pub detect: Option<Vec<MockDetection>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct FixtureFile {
    #[serde(default)]
    latency_ms: f64,
    entries: Vec<MockEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Rules merged per image hash. Several entries may name the same image;
/// their rules are concatenated in file order.
#[derive(Debug, Clone, Default)]
pub struct MockFixture {
    latency_ms: f64,
    by_image: HashMap<String, MockEntry>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let invalid = |message: String| FixtureError::Invalid { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| invalid(e.to_string()))?;
        let file: FixtureFile = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_entries(file.latency_ms, file.entries, base).map_err(invalid)
    }

    /// Build from in-memory entries; image paths resolve against `base`.
    pub fn from_entries(latency_ms: f64, entries: Vec<MockEntry>, base: &Path) -> Result<Self, String> {
        if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
            return Err(format!("latency_ms must be non-negative, got {latency_ms}"));
        }
        let mut by_image: HashMap<String, MockEntry> = HashMap::new();
        for (i, entry) in entries.into_iter().enumerate() {
            let key = match (&entry.image, &entry.image_sha256) {
                (Some(p), None) => {
                    let bytes = std::fs::read(base.join(p)).map_err(|e| format!("entry {i}: {p}: {e}"))?;
                    match entry.crop {
                        Some([x0, y0, x1, y1]) => {
                            let b = BoundingBox::new(x0, y0, x1, y1).map_err(|e| format!("entry {i}: {e}"))?;
                            let crop = crop_png(&bytes, &b).map_err(|e| format!("entry {i}: {e}"))?;
                            sha256_hex(&crop)
                        }
                        None => sha256_hex(&bytes),
                    }
                }
                (None, Some(h)) if entry.crop.is_none() => h.to_ascii_lowercase(),
                _ => return Err(format!("entry {i}: give exactly one of image or image_sha256 (crop needs image)")),
            };
            if let Some(dets) = &entry.detect {
                for d in dets {
                    let [x0, y0, x1, y1] = d.bbox;
                    BoundingBox::new(x0, y0, x1, y1).map_err(|e| format!("entry {i}: {e}"))?;
                }
            }
            let slot = by_image.entry(key).or_default();
            if entry.classify.is_some() {
                slot.classify = entry.classify;
            }
            slot.generate.extend(entry.generate);
            if let Some(d) = entry.detect {
                slot.detect.get_or_insert_with(Vec::new).extend(d);
            }
        }
        Ok(Self { latency_ms, by_image })
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency_ms
    }

    /// The response body for a request, or a miss naming its digest.
    pub fn respond(&self, path: &str, request: &Value) -> Result<Value, BackendError> {
        let miss = || BackendError::MockMiss { path: path.to_string(), digest: request_digest(path, request) };
        let b64 = request
            .get("image_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("request has no image_b64".into()))?;
        let image = decode_image(b64)?;
        let Some(entry) = self.by_image.get(&sha256_hex(&image)) else {
            return Err(miss());
        };
        match path {
            CLASSIFY_PATH => {
                let labels = str_list(request, "labels")?;
                let rule = entry.classify.as_ref().ok_or_else(miss)?;
                if rule.class_index >= labels.len() {
                    return Err(miss());
                }
                let rest = if labels.len() > 1 { 0.1 / (labels.len() - 1) as f64 } else { 0.0 };
                let scores: Vec<f64> =
                    (0..labels.len()).map(|i| if i == rule.class_index { 0.9 } else { rest }).collect();
                Ok(json!({ "scores": scores }))
            }
            GENERATE_PATH => {
                let prompt = request
                    .get("prompt")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("request has no prompt".into()))?;
                let rule = entry
                    .generate
                    .iter()
                    .find(|r| r.prompt_contains.as_deref().is_none_or(|s| prompt.contains(s)))
                    .ok_or_else(miss)?;
                Ok(json!({ "text": rule.text }))
            }
            DETECT_PATH => {
                let queries = str_list(request, "queries")?;
                let threshold = request
                    .get("score_threshold")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| BackendError::Protocol("request has no score_threshold".into()))?;
                let dets = entry.detect.as_ref().ok_or_else(miss)?;
                let out: Vec<WireDetection> =
                    dets.iter()
                        .filter(|d| d.score >= threshold)
                        .filter_map(|d| {
                            queries
                                .iter()
                                .position(|q| q.eq_ignore_ascii_case(&d.query))
                                .map(|query_index| WireDetection { bbox: d.bbox, query_index, score: d.score })
                        })
                        .collect();
                Ok(json!({ "detections": out }))
            }
            _ => Err(miss()),
        }
    }
}

fn str_list(request: &Value, name: &str) -> Result<Vec<String>, BackendError> {
    request
        .get(name)
        .and_then(|v| serde_json::from_value::<Vec<String>>(v.clone()).ok())
        .ok_or_else(|| BackendError::Protocol(format!("request has no string list {name:?}")))
}

/// In-process transport over a [`MockFixture`]; latency is the fixture's
/// constant.
pub struct MockTransport {
    fixture: std::sync::Arc<MockFixture>,
}

impl MockTransport {
    pub fn new(fixture: std::sync::Arc<MockFixture>) -> Self {
        Self { fixture }
    }
}

#[async_trait]
impl Transport for MockTransport {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError> {
        let body = self.fixture.respond(path, request)?;
        Ok(Reply { body, latency_ms: self.fixture.latency_ms })
    }
}
