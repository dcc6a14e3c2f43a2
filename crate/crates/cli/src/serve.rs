use std::io::Write;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use vlmeval_core::backends::{BackendError, MockFixture, CLASSIFY_PATH, DETECT_PATH, GENERATE_PATH, HEALTH_PATH};

use crate::MockServeArgs;

type Fixture = Arc<MockFixture>;

fn answer(fixture: &MockFixture, path: &str, body: &Value) -> (StatusCode, Json<Value>) {
    match fixture.respond(path, body) {
        Ok(v) => (StatusCode::OK, Json(v)),
        Err(BackendError::MockMiss { digest, .. }) => {
            (StatusCode::NOT_FOUND, Json(json!({ "error": "no fixture entry for request", "digest": digest })))
        }
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))),
    }
}

async fn classify(State(f): State<Fixture>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    answer(&f, CLASSIFY_PATH, &body)
}

async fn generate(State(f): State<Fixture>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    answer(&f, GENERATE_PATH, &body)
}

async fn detect(State(f): State<Fixture>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    answer(&f, DETECT_PATH, &body)
}

/// Serve until killed. Prints `listening on http://ADDR` once bound.
pub async fn serve(a: MockServeArgs) -> Result<()> {
    let fixture = Arc::new(MockFixture::load(&a.fixture)?);
    let app = Router::new()
        .route(HEALTH_PATH, get(|| async { Json(json!({ "status": "ok" })) }))
        .route(CLASSIFY_PATH, post(classify))
        .route(GENERATE_PATH, post(generate))
        .route(DETECT_PATH, post(detect))
        .with_state(fixture);
    let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
        .await
        .with_context(|| format!("binding {}:{}", a.host, a.port))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    axum::serve(listener, app).await.context("serving")
}
