//! Completion backends: scripted policies for tests, recorded replies
//! replayed from fixtures, and a remote chat-completion endpoint.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, AgentError, AgentRole, CompletionRequest, Verdict};

/// Renders a verdict in the reply format the parser accepts. An abstain
/// request yields just the rationale, which no parser recognizes.
pub fn format_reply(verdict: Verdict, rationale: &str) -> String {
    match verdict {
        Verdict::Correct | Verdict::Incorrect => {
            format!("VERDICT: {verdict}\nREASON: {rationale}")
        }
        Verdict::Abstain => rationale.to_owned(),
    }
}

/// Deterministic backend driven by a pure function of the request.
pub struct ScriptedBackend {
    policy: Box<dyn Fn(&CompletionRequest) -> String + Send + Sync>,
}

impl ScriptedBackend {
    pub fn with_policy<F>(policy: F) -> Self
    where
        F: Fn(&CompletionRequest) -> String + Send + Sync + 'static,
    {
        Self { policy: Box::new(policy) }
    }

    /// Replies with the same verdict and rationale on every request.
    pub fn fixed(verdict: Verdict, rationale: &str) -> Self {
        let rationale = rationale.to_owned();
        Self::with_policy(move |_| format_reply(verdict, &rationale))
    }

    /// Replies per round, holding the last verdict once the script runs out.
    ///
    /// Panics if `verdicts` is empty.
    pub fn by_round(verdicts: Vec<Verdict>, rationale: &str) -> Self {
        assert!(!verdicts.is_empty(), "by_round needs at least one verdict");
        let rationale = rationale.to_owned();
        Self::with_policy(move |req| {
            let idx = (req.round as usize).min(verdicts.len() - 1);
            format_reply(verdicts[idx], &rationale)
        })
    }
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AgentError> {
        Ok((self.policy)(request))
    }
}

/// One recorded reply, addressed by who was asked, when, and about what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub role: AgentRole,
    pub round: u32,
    pub triple: String,
    pub reply: String,
}

/// Backend that serves pre-recorded replies and fails on anything
/// unrecorded.
pub struct ReplayBackend {
    replies: HashMap<(AgentRole, u32, String), String>,
}

impl ReplayBackend {
    pub fn from_records(records: Vec<ReplayRecord>) -> Result<Self, AgentError> {
        let mut replies = HashMap::new();
        for record in records {
            let key = (record.role, record.round, record.triple);
            if replies.contains_key(&key) {
                return Err(AgentError::Fixture(format!(
                    "duplicate reply for {} round {} triple {}",
                    key.0, key.1, key.2
                )));
            }
            replies.insert(key, record.reply);
        }
        Ok(Self { replies })
    }

    /// Reads a JSON array of records.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, AgentError> {
        let records: Vec<ReplayRecord> = serde_json::from_reader(reader)
            .map_err(|e| AgentError::Fixture(format!("invalid replay fixture: {e}")))?;
        Self::from_records(records)
    }

    pub fn from_path(path: &Path) -> Result<Self, AgentError> {
        let file = File::open(path).map_err(|e| {
            AgentError::Fixture(format!("cannot open replay fixture {}: {e}", path.display()))
        })?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl AgentBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AgentError> {
        self.replies
            .get(&(request.role, request.round, request.triple_key.clone()))
            .cloned()
            .ok_or_else(|| {
                AgentError::Transport(format!(
                    "no scripted reply for {} round {} triple {}",
                    request.role, request.round, request.triple_key
                ))
            })
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_timeout_seconds() -> u64 {
    30
}

fn default_api_key_env() -> String {
    "MAKGED_API_KEY".to_owned()
}

/// Connection settings for an OpenAI-style chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_seconds")]
    pub timeout_seconds: u64,
    /// Environment variable holding the bearer token. When the variable
    /// is unset or empty the request is sent without authorization.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

const SYSTEM_MESSAGE: &str =
    "You are a careful knowledge-graph inspector. Follow the reply format exactly.";

pub(crate) fn build_request_body(config: &RemoteChatConfig, prompt: &str) -> serde_json::Value {
    serde_json::json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": [
            {"role": "system", "content": SYSTEM_MESSAGE},
            {"role": "user", "content": prompt},
        ],
    })
}

pub(crate) fn parse_response_body(body: &str) -> Result<String, AgentError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| AgentError::Transport(format!("malformed response body: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| {
            AgentError::Transport("response carries no message content".to_owned())
        })
}

/// Backend that posts each prompt to a chat-completion endpoint.
pub struct RemoteChatBackend {
    config: RemoteChatConfig,
    client: reqwest::blocking::Client,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteChatConfig) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| AgentError::Transport(format!("cannot build http client: {e}")))?;
        Ok(Self { config, client })
    }

    fn api_key(&self) -> Option<String> {
        match std::env::var(&self.config.api_key_env) {
            Ok(value) if !value.is_empty() => Some(value),
            _ => None,
        }
    }
}

impl AgentBackend for RemoteChatBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AgentError> {
        let mut http = self
            .client
            .post(&self.config.url)
            .json(&build_request_body(&self.config, &request.prompt));
        if let Some(key) = self.api_key() {
            http = http.bearer_auth(key);
        }
        let response = http
            .send()
            .map_err(|e| AgentError::Transport(format!("request failed: {e}")))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| AgentError::Transport(format!("cannot read response: {e}")))?;
        if !status.is_success() {
            return Err(AgentError::Transport(format!(
                "endpoint returned {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        parse_response_body(&body)
    }
}
