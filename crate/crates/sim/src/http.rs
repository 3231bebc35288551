//! Requests against the in-process router.

use axum::body::{to_bytes, Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use litlab_baseline::{Transport, TransportError};
use serde::de::DeserializeOwned;
use serde_json::Value;
use tower::ServiceExt;

/// Sends one request and decodes the JSON response (`Null` when empty).
pub async fn call(
    app: &Router,
    method: Method,
    path: &str,
    headers: &[(&str, &str)],
    body: Option<&Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, path, headers, body).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

pub async fn call_raw(
    app: &Router,
    method: Method,
    path: &str,
    headers: &[(&str, &str)],
    body: Option<&Value>,
) -> (StatusCode, Bytes) {
    let mut req = Request::builder().method(method).uri(path);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .expect("valid request");
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap_or_default())
}

/// A system's view of the broker.
#[derive(Clone)]
pub struct SystemClient {
    pub app: Router,
    pub key: String,
}

impl SystemClient {
    /// GET decoded straight into `T`.
    pub async fn get_as<T: DeserializeOwned>(&self, path: &str) -> Result<T, TransportError> {
        let (status, bytes) = call_raw(&self.app, Method::GET, path, &[("api-key", &self.key)], None).await;
        if !status.is_success() {
            let body = String::from_utf8_lossy(&bytes).into_owned();
            return Err(TransportError::Status { status: status.as_u16(), body });
        }
        serde_json::from_slice(&bytes).map_err(|e| TransportError::Decode(e.to_string()))
    }

    async fn send(&self, method: Method, path: &str, body: Option<&Value>) -> Result<Value, TransportError> {
        let (status, v) = call(&self.app, method, path, &[("api-key", &self.key)], body).await;
        if status.is_success() {
            Ok(v)
        } else {
            Err(TransportError::Status { status: status.as_u16(), body: v.to_string() })
        }
    }
}

impl Transport for SystemClient {
    async fn get(&self, path: &str) -> Result<Value, TransportError> {
        self.send(Method::GET, path, None).await
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, TransportError> {
        self.send(Method::POST, path, Some(&body)).await
    }
}
