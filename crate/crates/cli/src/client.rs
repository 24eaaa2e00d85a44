//! Blocking HTTP client for the daemon API.

use std::fmt;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::Method;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientError {
    /// The daemon could not be reached or sent something that is not JSON.
    Transport(String),
    /// A non-2xx reply carrying the `{"error", "detail"}` envelope.
    Api { status: u16, error: String, detail: Value },
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Transport(_) => "daemon_unreachable",
            ClientError::Api { error, .. } => error,
        }
    }

    pub fn detail(&self) -> Value {
        match self {
            ClientError::Transport(m) => Value::String(m.clone()),
            ClientError::Api { detail, .. } => detail.clone(),
        }
    }

    /// `detail.code` of a `token_invalid` error, e.g. `expired`.
    pub fn sub_code(&self) -> Option<&str> {
        match self {
            ClientError::Api { detail, .. } => detail.get("code").and_then(Value::as_str),
            ClientError::Transport(_) => None,
        }
    }
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Transport(m) => write!(f, "daemon unreachable: {m}"),
            ClientError::Api { status, error, detail } => match detail {
                Value::String(s) => write!(f, "{error} ({status}): {s}"),
                Value::Object(o) if o.contains_key("message") => {
                    write!(f, "{error} ({status}): {}", o["message"].as_str().unwrap_or_default())
                }
                other => write!(f, "{error} ({status}): {other}"),
            },
        }
    }
}

impl std::error::Error for ClientError {}

#[derive(Debug, Clone)]
pub struct DaemonClient {
    base: String,
    http: Client,
}

impl DaemonClient {
    /// `base` is `host:port` or a full `http://` URL.
    pub fn new(base: &str) -> DaemonClient {
        let base = base.trim_end_matches('/');
        let base = if base.contains("://") { base.to_owned() } else { format!("http://{base}") };
        let http = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client without TLS always builds");
        DaemonClient { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn get(&self, path: &str) -> Result<Value, ClientError> {
        self.send(Method::GET, path, None)
    }

    pub fn post<T: Serialize + ?Sized>(&self, path: &str, body: &T) -> Result<Value, ClientError> {
        self.send(Method::POST, path, Some(to_body(body)?))
    }

    pub fn post_empty(&self, path: &str) -> Result<Value, ClientError> {
        self.send(Method::POST, path, None)
    }

    /// Sends `body` verbatim.
    pub fn put_raw(&self, path: &str, body: String) -> Result<Value, ClientError> {
        self.send(Method::PUT, path, Some(body))
    }

    pub fn delete(&self, path: &str) -> Result<Value, ClientError> {
        self.send(Method::DELETE, path, None)
    }

    fn send(&self, method: Method, path: &str, body: Option<String>) -> Result<Value, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.header("content-type", "application/json").body(body);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("{status}: response is not JSON: {e}")))?;
        if status.is_success() {
            return Ok(value);
        }
        let error = value.get("error").and_then(Value::as_str).unwrap_or("unknown").to_owned();
        let detail = value.get("detail").cloned().unwrap_or(Value::Null);
        Err(ClientError::Api { status: status.as_u16(), error, detail })
    }
}

fn to_body<T: Serialize + ?Sized>(body: &T) -> Result<String, ClientError> {
    icp_core::canonical::to_string(body).map_err(|e| ClientError::Transport(e.to_string()))
}

/// Percent-encodes a path segment.
pub fn segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
