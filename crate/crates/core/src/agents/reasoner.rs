use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::intent::{translate_intent, ObjectiveSpec};
use crate::error::{Error, Result};

/// Supervisor output together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub spec: ObjectiveSpec,
    pub backend: String,
    /// Set when a remote backend failed and the grammar answered instead.
    pub fallback: Option<String>,
}

/// Turns operator text into an [`ObjectiveSpec`].
pub trait IntentBackend: Send + Sync {
    fn translate(&self, text: &str, num_users: usize) -> Result<Translation>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GrammarBackend;

impl IntentBackend for GrammarBackend {
    fn translate(&self, text: &str, num_users: usize) -> Result<Translation> {
        Ok(Translation { spec: translate_intent(text, num_users)?, backend: "grammar".into(), fallback: None })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("{0}")]
    Failed(String),
}

/// Text-in/text-out completion service.
pub trait Transport: Send + Sync {
    fn complete(&self, prompt: &str, timeout: Duration) -> std::result::Result<String, TransportError>;
}

/// Prompt sent to a remote text model.
pub fn supervisor_prompt(text: &str, num_users: usize) -> String {
    format!(
        "You are the supervisor of a cell-free radio access network with {num_users} users numbered 1 to {num_users}.\n\
Translate the operator intent into a JSON object with exactly these fields:\n\
  \"utility_kind\": \"sum_rate\" or \"sum_log_rate\",\n\
  \"energy_saving\": true or false,\n\
  \"r_min_mbps\": array of {num_users} non-negative numbers (0 when unconstrained),\n\
  \"monitored_constraints\": array of {{\"user\": n, \"min_rate_mbps\": x}} for every positive entry, sorted by user.\n\
Answer with the JSON object only.\n\
Intent: {text}\n"
    )
}

/// Parses and validates a remote answer against the response schema.
pub fn parse_remote_response(body: &str, num_users: usize) -> Result<ObjectiveSpec> {
    let spec: ObjectiveSpec =
        serde_json::from_str(body.trim()).map_err(|e| Error::Format(format!("remote response: {e}")))?;
    spec.validate(num_users)?;
    Ok(spec)
}

/// Remote text model with the grammar as fallback.
pub struct RemoteBackend<T: Transport> {
    pub transport: T,
    pub timeout: Duration,
}

impl<T: Transport> RemoteBackend<T> {
    pub fn new(transport: T, timeout: Duration) -> Self {
        Self { transport, timeout }
    }
}

impl<T: Transport> IntentBackend for RemoteBackend<T> {
    fn translate(&self, text: &str, num_users: usize) -> Result<Translation> {
        let prompt = supervisor_prompt(text, num_users);
        let reason = match self.transport.complete(&prompt, self.timeout) {
            Ok(body) => match parse_remote_response(&body, num_users) {
                Ok(spec) => return Ok(Translation { spec, backend: "remote".into(), fallback: None }),
                Err(e) => format!("malformed remote response: {e}"),
            },
            Err(e) => format!("remote backend: {e}"),
        };
        tracing::warn!(target: "agents", %reason, "falling back to the grammar backend");
        let spec = translate_intent(text, num_users)?;
        Ok(Translation { spec, backend: "grammar".into(), fallback: Some(reason) })
    }
}
