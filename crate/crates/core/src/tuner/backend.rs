//! Language model backends: a scripted stand-in and an HTTP chat-completion
//! client.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {detail}")]
    Unavailable { attempts: u32, detail: String },
    #[error("backend returned an empty response")]
    Empty,
    #[error("scripted responses exhausted after {0}")]
    Exhausted(usize),
    #[error("auth token variable {0} is not set")]
    MissingToken(String),
}

pub trait LlmBackend: Send {
    /// Sends the prompt segments in order and returns the final reply.
    fn query(&mut self, segments: &[String]) -> Result<String, BackendError>;
    fn describe(&self) -> String;
}

/// Replays canned responses in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    next: usize,
    /// Restart from the first response once all were used.
    pub cycle: bool,
    /// Segment lists received, for inspection in tests.
    pub received: Vec<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        ScriptedBackend { responses, next: 0, cycle: false, received: Vec::new() }
    }

    /// Script file contents: when the text holds triple-backtick blocks,
    /// each block plus the prose up to the next block is one response;
    /// otherwise every non-empty line is one response.
    pub fn from_script(text: &str) -> Self {
        if !text.contains("```") {
            return ScriptedBackend::new(
                text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            );
        }
        let mut spans = Vec::new();
        let mut pos = 0;
        while let Some(open) = text[pos..].find("```").map(|i| pos + i) {
            let Some(close) = text[open + 3..].find("```").map(|i| open + 3 + i + 3) else { break };
            spans.push((open, close));
            pos = close;
        }
        // Prose between two blocks goes with the later block when separated
        // by a blank line, otherwise with the earlier one.
        let mut cuts = vec![0];
        for w in spans.windows(2) {
            let gap = &text[w[0].1..w[1].0];
            cuts.push(gap.rfind("\n\n").map_or(w[1].0, |i| w[0].1 + i));
        }
        cuts.push(text.len());
        let out = cuts.windows(2).map(|c| text[c[0]..c[1]].trim().to_string()).collect();
        ScriptedBackend::new(out)
    }

    /// Picks the response list whose temperature is closest to `temperature`,
    /// standing in for sampling variation of a real model.
    pub fn with_variants(variants: &[(f64, Vec<String>)], temperature: f64) -> Self {
        let chosen = variants
            .iter()
            .min_by(|a, b| (a.0 - temperature).abs().total_cmp(&(b.0 - temperature).abs()))
            .map(|v| v.1.clone())
            .unwrap_or_default();
        ScriptedBackend::new(chosen)
    }

    pub fn remaining(&self) -> usize {
        self.responses.len().saturating_sub(self.next)
    }
}

impl LlmBackend for ScriptedBackend {
    fn query(&mut self, segments: &[String]) -> Result<String, BackendError> {
        self.received.push(segments.to_vec());
        if self.next >= self.responses.len() {
            if self.cycle && !self.responses.is_empty() {
                self.next = 0;
            } else {
                return Err(BackendError::Exhausted(self.responses.len()));
            }
        }
        let r = self.responses[self.next].clone();
        self.next += 1;
        if r.trim().is_empty() {
            return Err(BackendError::Empty);
        }
        Ok(r)
    }

    fn describe(&self) -> String {
        format!("scripted ({} responses)", self.responses.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding a bearer token, if any.
    pub auth_env: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            auth_env: Some("LLM_API_KEY".into()),
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteBackend { config, agent }
    }

    fn token(&self) -> Result<Option<String>, BackendError> {
        match &self.config.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(t) if !t.is_empty() => Ok(Some(t)),
                _ if self.config.endpoint.starts_with("http://") => Ok(None),
                _ => Err(BackendError::MissingToken(var.clone())),
            },
        }
    }

    fn request_body(&self, segment: &str, index: usize, total: usize) -> Value {
        let content = if total > 1 {
            format!("[part {} of {}]\n{}", index + 1, total, segment)
        } else {
            segment.to_string()
        };
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{ "role": "user", "content": content }],
        })
    }

    fn send_once(&self, body: &Value, token: Option<&str>) -> Result<String, String> {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("unexpected response shape: {v}"))
    }

    fn send(&self, body: &Value, token: Option<&str>) -> Result<String, BackendError> {
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.send_once(body, token) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("backend attempt {attempt}/{attempts} failed: {e}");
                    last = e;
                }
            }
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(BackendError::Unavailable { attempts, detail: last })
    }
}

impl LlmBackend for RemoteBackend {
    fn query(&mut self, segments: &[String]) -> Result<String, BackendError> {
        let token = self.token()?;
        let mut last = String::new();
        for (i, seg) in segments.iter().enumerate() {
            let body = self.request_body(seg, i, segments.len());
            last = self.send(&body, token.as_deref())?;
        }
        if last.trim().is_empty() {
            return Err(BackendError::Empty);
        }
        Ok(last)
    }

    fn describe(&self) -> String {
        format!("remote {} model {} temperature {}", self.config.endpoint, self.config.model, self.config.temperature)
    }
}
