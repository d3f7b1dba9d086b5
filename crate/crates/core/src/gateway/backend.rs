use std::time::Duration;

use serde_json::Value;

/// Failure of a single wire attempt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("unscripted request {0}")]
    Unscripted(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout => true,
            BackendError::Status { code, .. } => *code >= 500 || *code == 429,
            BackendError::Unscripted(_) => false,
        }
    }
}

/// Something that answers one JSON request body with one JSON response body.
/// The HTTP client and every mock implement this, so batching, caching and
/// retry logic is shared.
pub trait Backend: Send + Sync {
    fn post(&self, body: &Value) -> Result<Value, BackendError>;
}

/// JSON-over-HTTP POST to a fixed URL.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
        }
    }
}

impl Backend for HttpBackend {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let mut resp = self.agent.post(&self.url).send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        let code = resp.status().as_u16();
        if !(200..300).contains(&code) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { code, body });
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| BackendError::Transport(format!("invalid JSON response: {e}")))
    }
}
