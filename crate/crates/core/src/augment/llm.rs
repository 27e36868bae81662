use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An external text-completion service.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Calls `llm`, retrying service failures with exponential backoff.
/// Returns the completion and the number of retries it took.
pub fn complete_with_retry<C: LlmClient + ?Sized>(llm: &C, prompt: &str, policy: RetryPolicy) -> Result<(String, u32)> {
    let attempts = policy.max_attempts.max(1);
    let mut delay = policy.base_delay;
    for attempt in 1..=attempts {
        match llm.complete(prompt) {
            Ok(text) => {
                if attempt > 1 {
                    log::info!("completion succeeded after {} retries", attempt - 1);
                }
                return Ok((text, attempt - 1));
            }
            Err(e @ (Error::Service(_) | Error::BackendUnavailable(_))) if attempt < attempts => {
                log::warn!("completion attempt {attempt}/{attempts} failed: {e}");
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on the last attempt")
}

/// Deterministic stand-in for a completion service.
///
/// It reads the last `Caption: ` and `Tags: ` lines of the prompt. With a
/// tag line it answers `<caption> | <tags>`; otherwise `[PARA] <caption>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

impl MockLlm {
    fn last_field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
        prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix(label))
            .map(str::trim)
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let caption = Self::last_field(prompt, "Caption: ")
            .ok_or_else(|| Error::Service("mock: prompt has no `Caption:` line".into()))?;
        Ok(match Self::last_field(prompt, "Tags: ") {
            Some(tags) => format!("{caption} | {tags}"),
            None => format!("[PARA] {caption}"),
        })
    }
}

/// Settings of an HTTP completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Minimum spacing between requests, in milliseconds.
    pub min_interval_ms: u64,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/complete".into(),
            model: "vicuna".into(),
            temperature: 0.7,
            max_tokens: 128,
            timeout_secs: 60,
            min_interval_ms: 0,
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Completion service reached by `POST {model, prompt, temperature,
/// max_tokens}` returning `{text}`.
pub struct HttpLlm {
    config: HttpLlmConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

impl HttpLlm {
    pub fn new(config: HttpLlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            last_request: Mutex::new(None),
        }
    }

    fn throttle(&self) {
        let interval = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_request.lock().expect("rate limiter lock poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.throttle();
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Service(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() != 200 {
            return Err(Error::Service(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Service(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}
