use std::time::Duration;

use cellfree_core::agents::{Transport, TransportError};
use serde::{Deserialize, Serialize};

/// Completion endpoint reached over plain HTTP.
///
/// Sends `{"prompt": …}` and expects `{"text": …}` back.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    url: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>) -> crate::error::Result<Self> {
        Ok(Self { url: url.into(), client: reqwest::blocking::Client::builder().build()? })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String, TransportError> {
        let resp = self
            .client
            .post(&self.url)
            .timeout(timeout)
            .json(&CompletionRequest { prompt })
            .send()
            .map_err(|e| if e.is_timeout() { TransportError::Timeout(timeout) } else { TransportError::Failed(e.to_string()) })?;
        if !resp.status().is_success() {
            return Err(TransportError::Failed(format!("status {}", resp.status())));
        }
        resp.json::<CompletionResponse>().map(|r| r.text).map_err(|e| TransportError::Failed(e.to_string()))
    }
}
