use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::Value;
use tracing::warn;

use super::{BackendEndpoint, BackendError, Reply, Transport, HEALTH_PATH};

/// Live transport: JSON over HTTP POST with retries and exponential backoff.
///
/// Connection failures, timeouts, HTTP 429 and 5xx are retried up to
/// `max_retries` times; other statuses fail at once. Latency covers the whole
/// call including retries, measured on the client.
pub struct HttpTransport {
    client: reqwest::Client,
    base_url: String,
    max_retries: u32,
    initial_backoff: Duration,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &BackendEndpoint, token: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| BackendError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self {
            client,
            base_url: endpoint.base_url.trim_end_matches('/').to_string(),
            max_retries: endpoint.max_retries,
            initial_backoff: endpoint.initial_backoff,
            token,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    /// `GET /health`, expecting `{"status":"ok"}`.
    pub async fn health(&self) -> Result<(), BackendError> {
        let resp = self
            .client
            .get(self.url(HEALTH_PATH))
            .send()
            .await
            .map_err(|e| BackendError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status();
        let body: Value = resp.json().await.map_err(|e| BackendError::Protocol(format!("health body: {e}")))?;
        if status.is_success() && body.get("status").and_then(Value::as_str) == Some("ok") {
            Ok(())
        } else {
            Err(BackendError::Protocol(format!("unhealthy endpoint: HTTP {status}, {body}")))
        }
    }

    async fn attempt(&self, path: &str, request: &Value) -> Result<Value, (bool, BackendError)> {
        let mut req = self.client.post(self.url(path)).json(request);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp =
            req.send().await.map_err(|e| (true, BackendError::Transport { attempts: 1, message: e.to_string() }))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, BackendError::Status { path: path.to_string(), status: status.as_u16(), body }));
        }
        resp.json::<Value>().await.map_err(|e| (true, BackendError::Transport { attempts: 1, message: e.to_string() }))
    }
}

pub(crate) fn round_ms(d: Duration) -> f64 {
    (d.as_secs_f64() * 1_000_000.0).round() / 1000.0
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, path: &str, request: &Value) -> Result<Reply, BackendError> {
        let start = Instant::now();
        let mut backoff = self.initial_backoff;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(path, request).await {
                Ok(body) => return Ok(Reply { body, latency_ms: round_ms(start.elapsed()) }),
                Err((retry, err)) => {
                    if !retry || attempt > self.max_retries {
                        return Err(match err {
                            BackendError::Transport { message, .. } => {
                                BackendError::Transport { attempts: attempt, message }
                            }
                            other => other,
                        });
                    }
                    warn!(path, attempt, error = %err, "retrying backend request");
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
            }
        }
    }
}
