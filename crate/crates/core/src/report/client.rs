//! Chat-completions client with retry, backoff and template fallback.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::head::Prediction;

use super::metadata::GaitMetadata;
use super::prompt::{assemble_prompt, parse_sections, PromptPair};
use super::template::render_template_report;
use super::{ClinicalReport, ReportSource};

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "GAITFUSE_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    /// Base URL; requests go to `{url}/chat/completions`.
    pub url: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub temperature: f32,
    pub max_tokens: u32,
    pub max_concurrency: usize,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            url: String::new(),
            model: "TinyLlama-1.1B-Chat-v1.0".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_base_ms: 250,
            temperature: 0.0,
            max_tokens: 512,
            max_concurrency: 4,
        }
    }
}

impl LlmEndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        LlmEndpointConfig {
            url: url.into(),
            ..Default::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            v.push(format!(
                "llm.url must start with http:// or https://, got {:?}",
                self.url
            ));
        }
        if self.model.trim().is_empty() {
            v.push("llm.model must not be empty".into());
        }
        if self.timeout_ms == 0 {
            v.push("llm.timeout_ms must be positive".into());
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            v.push(format!("llm.temperature must be in [0, 2], got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            v.push("llm.max_tokens must be positive".into());
        }
        if self.max_concurrency == 0 {
            v.push("llm.max_concurrency must be at least 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.url.trim_end_matches('/'))
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

#[derive(Debug)]
enum CallError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    Fatal(String),
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Transient(m) | CallError::Fatal(m) => f.write_str(m),
        }
    }
}

pub struct LlmClient {
    cfg: LlmEndpointConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("cfg", &self.cfg)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LlmClient {
    /// Builds a client, reading the bearer token from the environment.
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(cfg, token)
    }

    pub fn with_token(cfg: LlmEndpointConfig, token: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .timeout_connect(Some(timeout))
            .http_status_as_error(false)
            .proxy(None)
            .build()
            .into();
        Ok(LlmClient { cfg, agent, token })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    fn call_once(&self, body: &Value) -> Result<(String, Option<String>), CallError> {
        let mut req = self
            .agent
            .post(self.cfg.endpoint())
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| CallError::Transient(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(CallError::Transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(CallError::Fatal(format!("HTTP {status}")));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| CallError::Fatal(format!("response body: {e}")))?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| CallError::Fatal("response has no choices[0].message.content".into()))?;
        let model = v.get("model").and_then(Value::as_str).map(str::to_string);
        Ok((content.to_string(), model))
    }

    /// Sends the prompt, retrying transient failures with exponential
    /// backoff. Returns the completion text and the served model id.
    pub fn complete(&self, prompt: &PromptPair) -> Result<(String, String), String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let mut attempt = 0;
        loop {
            match self.call_once(&body) {
                Ok((text, model)) => return Ok((text, model.unwrap_or_else(|| self.cfg.model.clone()))),
                Err(CallError::Transient(m)) if attempt < self.cfg.max_retries => {
                    attempt += 1;
                    let wait = self.cfg.backoff(attempt);
                    log::warn!(
                        "LLM request failed ({m}); retry {attempt}/{} in {wait:?}",
                        self.cfg.max_retries
                    );
                    thread::sleep(wait);
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }

    /// Never fails: any transport or parse problem yields the template report.
    pub fn generate_report(&self, pred: &Prediction, meta: &GaitMetadata) -> ClinicalReport {
        let prompt = assemble_prompt(pred, meta);
        let start = Instant::now();
        match self.complete(&prompt) {
            Ok((text, model_id)) => match parse_sections(&text) {
                Ok(sections) => ClinicalReport {
                    sections,
                    source: ReportSource::Llm,
                    model_id,
                    latency_ms: start.elapsed().as_secs_f64() * 1e3,
                },
                Err(e) => {
                    log::warn!("LLM completion rejected ({e}); using template report");
                    render_template_report(pred, meta)
                }
            },
            Err(e) => {
                log::warn!("LLM unavailable ({e}); using template report");
                render_template_report(pred, meta)
            }
        }
    }
}

/// Generates one report per item, at most `workers` at a time, returned in
/// input order. Without a client every report comes from the template.
pub fn generate_reports(
    client: Option<&LlmClient>,
    items: &[(Prediction, GaitMetadata)],
    workers: usize,
) -> Vec<ClinicalReport> {
    let Some(client) = client else {
        return items.iter().map(|(p, m)| render_template_report(p, m)).collect();
    };
    let workers = workers.clamp(1, client.cfg.max_concurrency).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ClinicalReport>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((p, m)) = items.get(i) else { break };
                let r = client.generate_report(p, m);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
