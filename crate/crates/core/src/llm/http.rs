use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GenParams, Generation, LlmBackend};
use crate::error::{Error, Result};

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Send `top_k` as an extension field. Turn off for servers that reject
    /// unknown request fields.
    #[serde(default = "default_true")]
    pub send_top_k: bool,
    /// Issue one `n = 1` request per sample concurrently instead of a single
    /// request with `n = n_samples`.
    #[serde(default)]
    pub parallel_samples: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_s: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            send_top_k: true,
            parallel_samples: false,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(Error::Config("timeout_s must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().expect("in-flight gate poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("in-flight gate poisoned");
        }
        *slots -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("in-flight gate poisoned") += 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Retryable(String),
    Fatal(Error),
}

/// Blocking OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    config: LlmEndpointConfig,
    client: Client,
    token: Option<String>,
    gate: InFlight,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: LlmEndpointConfig) -> Result<Self> {
        config.validate()?;
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            gate: InFlight::new(config.max_in_flight),
            config,
            client,
            token,
            next_id: AtomicU64::new(0),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub(crate) fn request_body(&self, prompt: &str, params: &GenParams, n: usize) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
            "n": n,
        });
        if self.config.send_top_k {
            body["top_k"] = json!(params.top_k);
        }
        body
    }

    fn attempt(&self, body: &Value, request_id: &str, n: usize) -> Result<Vec<String>, Attempt> {
        let _slot = self.gate.acquire();
        let mut req = self
            .client
            .post(self.endpoint())
            .header("X-Request-Id", request_id)
            .json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Attempt::Retryable(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))?;
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retryable(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Protocol {
                request_id: request_id.to_string(),
                message: format!("HTTP {status}: {text}"),
            }));
        }
        parse_completions(&text, n).map_err(|message| {
            Attempt::Fatal(Error::Protocol {
                request_id: request_id.to_string(),
                message,
            })
        })
    }

    fn call(&self, prompt: &str, params: &GenParams, n: usize) -> Result<Vec<String>> {
        let request_id = format!("fbrag-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let body = self.request_body(prompt, params, n);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(&body, &request_id, n) {
                Ok(texts) => return Ok(texts),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => last = msg,
            }
        }
        Err(Error::BackendUnavailable {
            request_id,
            message: format!("{} attempt(s) failed; last: {last}", self.config.retries + 1),
        })
    }
}

fn parse_completions(text: &str, n: usize) -> Result<Vec<String>, String> {
    #[derive(Deserialize)]
    struct Message {
        content: Option<String>,
    }
    #[derive(Deserialize)]
    struct Choice {
        #[serde(default)]
        index: usize,
        message: Message,
    }
    #[derive(Deserialize)]
    struct Completion {
        choices: Vec<Choice>,
    }

    let mut parsed: Completion =
        serde_json::from_str(text).map_err(|e| format!("malformed completion: {e}"))?;
    if parsed.choices.len() != n {
        return Err(format!(
            "expected {n} choice(s), backend returned {}",
            parsed.choices.len()
        ));
    }
    parsed.choices.sort_by_key(|c| c.index);
    Ok(parsed
        .choices
        .into_iter()
        .map(|c| c.message.content.unwrap_or_default())
        .collect())
}

impl LlmBackend for HttpBackend {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation> {
        params.validate()?;
        let started = Instant::now();
        let texts = if self.config.parallel_samples && params.n_samples > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..params.n_samples)
                    .map(|_| scope.spawn(|| self.call(prompt, params, 1)))
                    .collect();
                let mut texts = Vec::with_capacity(params.n_samples);
                for h in handles {
                    texts.extend(h.join().expect("sample thread panicked")?);
                }
                Ok::<_, Error>(texts)
            })?
        } else {
            self.call(prompt, params, params.n_samples)?
        };
        Ok(Generation {
            texts,
            latency: started.elapsed(),
        })
    }
}
