//! Blocking JSON-over-HTTP client for the optional external classifier and
//! embedding services.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Environment variable holding the bearer token sent to endpoints.
pub const API_KEY_ENV: &str = "DEFMINER_CLASSIFIER_KEY";

pub const DEFAULT_PROMPT: &str = "Decide whether the following sentence is a complete definition of the term, \
naming what the thing is and its essential characteristics, or an incomplete statement \
such as a slogan or a vague description. Answer with label complete or incomplete.\n\nSentence: {sentence}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEndpoint {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Must contain `{sentence}`.
    #[serde(default = "default_prompt")]
    pub prompt_template: String,
    #[serde(default)]
    pub enabled: bool,
    /// Extra attempts after a failed request.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// When false, an endpoint failure aborts instead of falling back to the
    /// deterministic path.
    #[serde(default = "default_true")]
    pub allow_fallback: bool,
    /// Upper bound on concurrent requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_prompt() -> String {
    DEFAULT_PROMPT.to_string()
}
fn default_retries() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_in_flight() -> usize {
    4
}

impl Default for ClassifierEndpoint {
    fn default() -> Self {
        ClassifierEndpoint::disabled()
    }
}

impl ClassifierEndpoint {
    pub fn disabled() -> Self {
        ClassifierEndpoint {
            url: String::new(),
            timeout_ms: default_timeout_ms(),
            prompt_template: default_prompt(),
            enabled: false,
            retries: default_retries(),
            allow_fallback: true,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn enabled(url: impl Into<String>) -> Self {
        ClassifierEndpoint {
            url: url.into(),
            enabled: true,
            ..ClassifierEndpoint::disabled()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn render_prompt(&self, sentence: &str) -> String {
        self.prompt_template.replace("{sentence}", sentence)
    }

    /// POSTs `body` and parses the JSON response, retrying up to
    /// `retries` extra times with a short linear backoff.
    pub fn post_json(&self, body: &Value) -> Result<Value> {
        if !self.enabled {
            return Err(Error::Endpoint("endpoint disabled".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout()))
            .build()
            .into();
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            let mut request = agent.post(&self.url);
            if let Some(key) = &key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Ok(mut response) => match response.body_mut().read_json::<Value>() {
                    Ok(value) => return Ok(value),
                    Err(e) => {
                        // a malformed body will not improve on retry
                        return Err(Error::Endpoint(format!("{}: unparsable body: {e}", self.url)));
                    }
                },
                Err(e) => last_error = format!("{}: {e}", self.url),
            }
        }
        Err(Error::Endpoint(last_error))
    }
}
