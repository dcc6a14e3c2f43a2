//! Record and replay of backend exchanges as JSON lines.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{request_digest, BackendError, Reply, Transport};

/// One line of a record store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendExchange {
    pub endpoint_path: String,
    pub request_digest: String,
    pub request: Value,
    pub response: Value,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Append-only writer shared by every recording transport of a run.
pub struct RecordSink {
    out: Mutex<BufWriter<File>>,
}

impl RecordSink {
    pub fn create(path: &Path) -> Result<Arc<Self>, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        Ok(Arc::new(Self { out: Mutex::new(BufWriter::new(file)) }))
    }

    pub fn append(&self, exchange: &BackendExchange) -> std::io::Result<()> {
        let line = serde_json::to_string(exchange)?;
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()
    }
}

/// Passes calls to `inner` and appends the final outcome of each one to the
/// sink. Retries happen inside `inner`, so a request is written once.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    sink: Arc<RecordSink>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, sink: Arc<RecordSink>) -> Self {
        Self { inner, sink }
    }
}

#[async_trait]
impl Transport for RecordingTransport {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError> {
        let start = std::time::Instant::now();
        let result = self.inner.send(path, request).await;
        let (response, latency_ms, error) = match &result {
            Ok(r) => (r.body.clone(), r.latency_ms, None),
            Err(e) => (Value::Null, super::http::round_ms(start.elapsed()), Some(e.to_string())),
        };
        let exchange = BackendExchange {
            endpoint_path: path.to_string(),
            request_digest: request_digest(path, request),
            request: request.clone(),
            response,
            latency_ms,
            error,
        };
        self.sink
            .append(&exchange)
            .map_err(|e| BackendError::Transport { attempts: 0, message: format!("record store: {e}") })?;
        result
    }
}

/// Recorded exchanges indexed by digest; the first line for a digest wins.
#[derive(Debug, Default, Clone)]
pub struct RecordStore {
    by_digest: HashMap<String, BackendExchange>,
    lines: usize,
}

impl RecordStore {
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| StoreError::Io { path: display.clone(), source })?;
        let mut store = RecordStore::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io { path: display.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: BackendExchange = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            store.insert(ex);
        }
        Ok(store)
    }

    pub fn insert(&mut self, exchange: BackendExchange) {
        self.lines += 1;
        self.by_digest.entry(exchange.request_digest.clone()).or_insert(exchange);
    }

    pub fn get(&self, digest: &str) -> Option<&BackendExchange> {
        self.by_digest.get(digest)
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }
}

/// Serves recorded responses; never touches the network.
pub struct ReplayTransport {
    store: Arc<RecordStore>,
}

impl ReplayTransport {
    pub fn new(store: Arc<RecordStore>) -> Self {
        Self { store }
    }
}

#[async_trait]
impl Transport for ReplayTransport {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError> {
        let digest = request_digest(path, request);
        let ex = self.store.get(&digest).ok_or_else(|| BackendError::ReplayMiss { path: path.to_string(), digest })?;
        match &ex.error {
            Some(msg) => Err(BackendError::Recorded(msg.clone())),
            None => Ok(Reply { body: ex.response.clone(), latency_ms: ex.latency_ms }),
        }
    }
}
