//! Blocking HTTP client for the teacher model, plus response parsing.
//!
//! The wire format is the common chat-completions shape: POST a JSON body
//! with `model`, `messages`, `temperature`; read the reply text from
//! `choices[0].message.content`. Requests are paced to a configured
//! per-minute budget and retried with exponential backoff.

use crate::expr::{ParseOutcome, Vocabulary};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("environment variable `{var}` is not set; no request was sent")]
    MissingApiKey { var: String },
    #[error("bad teacher config: {0}")]
    InvalidConfig(String),
    #[error("request failed after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("teacher returned status {status} after {attempts} attempts: {body}")]
    BadStatus {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("could not read completion text from response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    /// Name of the environment variable holding the API key. The key value
    /// itself never appears in configs, logs, or errors.
    pub api_key_env_var: String,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4o".to_string(),
            temperature: 1.0,
            max_retries: 3,
            requests_per_minute: 60,
            api_key_env_var: "FEATFORGE_API_KEY".to_string(),
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), TeacherError> {
        if self.endpoint_url.is_empty() {
            return Err(TeacherError::InvalidConfig("empty endpoint url".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(TeacherError::InvalidConfig(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.requests_per_minute == 0 {
            return Err(TeacherError::InvalidConfig(
                "requests_per_minute must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

const BACKOFF_BASE_MS: u64 = 100;
const BACKOFF_CAP_MS: u64 = 4_000;
const REQUEST_TIMEOUT_SECS: u64 = 60;

/// Reusable client: holds the key, the HTTP connection pool, and the pacing
/// state, so a corpus-building loop shares one rate limit.
pub struct TeacherClient {
    config: TeacherConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    next_allowed: Mutex<Instant>,
}

impl std::fmt::Debug for TeacherClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TeacherClient")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .finish_non_exhaustive()
    }
}

impl TeacherClient {
    /// Validates the config and resolves the API key. Fails before any
    /// network traffic when the key variable is unset or empty.
    pub fn new(config: TeacherConfig) -> Result<TeacherClient, TeacherError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env_var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| TeacherError::MissingApiKey {
                var: config.api_key_env_var.clone(),
            })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(REQUEST_TIMEOUT_SECS))
            .build()
            .map_err(|e| TeacherError::InvalidConfig(e.to_string()))?;
        Ok(TeacherClient {
            config,
            api_key,
            http,
            next_allowed: Mutex::new(Instant::now()),
        })
    }

    fn pace(&self) {
        let interval = Duration::from_millis(60_000 / u64::from(self.config.requests_per_minute));
        let mut next = self.next_allowed.lock().expect("pacing lock poisoned");
        let now = Instant::now();
        if now < *next {
            std::thread::sleep(*next - now);
        }
        *next = Instant::now() + interval;
    }

    /// Send one prompt, return the raw completion text. Network failures
    /// and non-2xx statuses are retried up to `max_retries` extra attempts
    /// with doubling backoff.
    pub fn request(&self, prompt: &str) -> Result<String, TeacherError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let attempts = self.config.max_retries + 1;
        let mut last_err = TeacherError::Network {
            attempts,
            message: "no attempt made".into(),
        };
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff =
                    (BACKOFF_BASE_MS << (attempt - 1).min(16)).min(BACKOFF_CAP_MS);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.pace();
            let sent = self
                .http
                .post(&self.config.endpoint_url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match sent {
                Err(e) => {
                    last_err = TeacherError::Network {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    };
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: serde_json::Value = resp
                            .json()
                            .map_err(|e| TeacherError::BadResponse(e.to_string()))?;
                        return extract_content(&value);
                    }
                    let body = resp.text().unwrap_or_default();
                    last_err = TeacherError::BadStatus {
                        status: status.as_u16(),
                        attempts: attempt + 1,
                        body: truncate(&body, 200),
                    };
                }
            }
        }
        Err(last_err)
    }
}

fn extract_content(value: &serde_json::Value) -> Result<String, TeacherError> {
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            TeacherError::BadResponse(format!(
                "missing choices[0].message.content in {}",
                truncate(&value.to_string(), 200)
            ))
        })
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let cut = (0..=max).rev().find(|i| s.is_char_boundary(*i)).unwrap_or(0);
        format!("{}...", &s[..cut])
    }
}

/// One-shot convenience wrapper around [`TeacherClient`].
pub fn request_teacher(config: &TeacherConfig, prompt: &str) -> Result<String, TeacherError> {
    TeacherClient::new(config.clone())?.request(prompt)
}

/// Turn raw completion text into a parsed sequence. Markdown code fences
/// are tolerated and stripped; everything else must be token words. Invalid
/// segments land in the outcome's diagnostics, never in the sequence.
pub fn parse_response(text: &str, vocab: &Vocabulary) -> ParseOutcome {
    let cleaned: String = text
        .lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    crate::expr::parse_text(&cleaned, vocab)
}
