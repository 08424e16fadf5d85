//! Text providers: the single abstraction through which summaries, thoughts,
//! goal proposals, refinements, and actions are generated.
//!
//! Mock providers are deterministic and instrumented with call counters so
//! tests can assert exact call budgets. The remote provider speaks an
//! OpenAI-compatible chat-completions endpoint.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

/// Environment variable holding the remote API key.
pub const API_KEY_VAR: &str = "PNLC_API_KEY";
/// Environment variable holding the remote API base URL.
pub const API_BASE_VAR: &str = "PNLC_API_BASE";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("no mock rule matches prompt (first 80 chars: {preview:?})")]
    NoRuleMatches { preview: String },
    #[error("remote call failed after {attempts} attempts: {reason}")]
    RemoteFailed { attempts: u32, reason: String },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("malformed remote response: {0}")]
    MalformedResponse(String),
}

/// A text-in, text-out provider with an observable call counter.
pub trait TextProvider: Send + Sync {
    /// Send one prompt and return the raw response text.
    fn send(&self, prompt: &str) -> Result<String, ProviderError>;
    /// Total number of `send` calls issued so far.
    fn calls(&self) -> u64;
}

/// One mock rule: fires when `marker` is a substring of the prompt.
///
/// Responses are consumed in order; the last one repeats once exhausted.
struct MockRule {
    marker: String,
    responses: Vec<String>,
    cursor: AtomicUsize,
}

/// Deterministic table-driven provider for tests and offline runs.
///
/// The first rule whose marker appears in the prompt wins.
#[derive(Default)]
pub struct MockProvider {
    rules: Vec<MockRule>,
    calls: AtomicU64,
    /// Captured prompts, for template audits in tests.
    pub captured: Mutex<Vec<String>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a rule answering `response` whenever `marker` appears in the prompt.
    pub fn with_rule(mut self, marker: &str, response: &str) -> Self {
        self.add_sequence(marker, &[response]);
        self
    }

    /// Add a rule that walks through `responses` on successive matching calls.
    pub fn with_sequence(mut self, marker: &str, responses: &[&str]) -> Self {
        self.add_sequence(marker, responses);
        self
    }

    fn add_sequence(&mut self, marker: &str, responses: &[&str]) {
        self.rules.push(MockRule {
            marker: marker.to_string(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            cursor: AtomicUsize::new(0),
        });
    }
}

impl TextProvider for MockProvider {
    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.captured.lock().unwrap().push(prompt.to_string());
        for rule in &self.rules {
            if prompt.contains(&rule.marker) {
                let i = rule.cursor.fetch_add(1, Ordering::SeqCst);
                let i = i.min(rule.responses.len() - 1);
                return Ok(rule.responses[i].clone());
            }
        }
        Err(ProviderError::NoRuleMatches {
            preview: prompt.chars().take(80).collect(),
        })
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Remote provider speaking `POST {base}/chat/completions`.
///
/// Credentials come from `PNLC_API_KEY` / `PNLC_API_BASE`. Retries with
/// exponential backoff up to `max_attempts`.
pub struct RemoteChatProvider {
    base: String,
    api_key: String,
    model: String,
    max_attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
    calls: AtomicU64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl RemoteChatProvider {
    /// Build from environment variables; fails if either is unset.
    pub fn from_env(model: &str) -> Result<Self, ProviderError> {
        let base = std::env::var(API_BASE_VAR).map_err(|_| ProviderError::MissingEnv(API_BASE_VAR))?;
        let api_key = std::env::var(API_KEY_VAR).map_err(|_| ProviderError::MissingEnv(API_KEY_VAR))?;
        Ok(Self::new(&base, &api_key, model))
    }

    pub fn new(base: &str, api_key: &str, model: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            client: reqwest::blocking::Client::new(),
            calls: AtomicU64::new(0),
        }
    }

    /// Override retry policy (tests use a zero backoff).
    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn send_once(&self, prompt: &str) -> Result<String, String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| "no choices in response".to_string())
    }
}

impl TextProvider for RemoteChatProvider {
    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            match self.send_once(prompt) {
                Ok(text) => return Ok(text),
                Err(reason) => last = reason,
            }
            if attempt + 1 < self.max_attempts {
                std::thread::sleep(self.backoff * 2u32.pow(attempt));
            }
        }
        Err(ProviderError::RemoteFailed {
            attempts: self.max_attempts,
            reason: last,
        })
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_matches_first_rule_and_counts_calls() {
        let p = MockProvider::new()
            .with_rule("alpha", "A")
            .with_rule("beta", "B");
        assert_eq!(p.send("say alpha now").unwrap(), "A");
        assert_eq!(p.send("beta please").unwrap(), "B");
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn mock_sequence_sticks_at_last_response() {
        let p = MockProvider::new().with_sequence("go", &["one", "two"]);
        assert_eq!(p.send("go").unwrap(), "one");
        assert_eq!(p.send("go").unwrap(), "two");
        assert_eq!(p.send("go").unwrap(), "two");
    }

    #[test]
    fn mock_without_match_errors() {
        let p = MockProvider::new().with_rule("x", "y");
        assert!(matches!(
            p.send("nothing here"),
            Err(ProviderError::NoRuleMatches { .. })
        ));
    }
}
