use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GenParams, Generation, LlmBackend};
use crate::chunker::count_words;
use crate::error::{Error, Result};

/// One pattern or several that must all occur in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Patterns {
    One(String),
    All(Vec<String>),
}

impl Patterns {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Patterns::One(p) => prompt.contains(p.as_str()),
            Patterns::All(ps) => ps.iter().all(|p| prompt.contains(p.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub contains: Patterns,
    /// Sample `i` of a call receives `responses[i % len]`.
    #[serde(default)]
    pub responses: Vec<String>,
    /// Reply with the question restated at the end of the prompt instead.
    #[serde(default)]
    pub echo_question: bool,
}

/// Simulated backend time: `base_ms + per_prompt_word_ms * prompt words +
/// per_output_word_ms * longest output in words`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockLatency {
    pub base_ms: f64,
    pub per_prompt_word_ms: f64,
    pub per_output_word_ms: f64,
    /// Actually sleep for the simulated time and report the measured
    /// wall-clock duration instead of the simulated one.
    pub sleep: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Used when no rule matches; an empty list makes unmatched prompts a
    /// protocol error.
    #[serde(default)]
    pub default: Vec<String>,
    #[serde(default)]
    pub latency: MockLatency,
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Scripted backend. Output depends only on the prompt, the parameters and
/// the fixture.
#[derive(Debug)]
pub struct MockBackend {
    fixture: MockFixture,
    log: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self {
            fixture,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        MockFixture::load(path).map(Self::new)
    }

    /// Every prompt answered with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new(MockFixture {
            default: vec![text.into()],
            ..MockFixture::default()
        })
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    fn simulated(&self, prompt: &str, outputs: &[String]) -> Duration {
        let lat = &self.fixture.latency;
        let longest = outputs.iter().map(|o| count_words(o)).max().unwrap_or(0);
        let ms = lat.base_ms
            + lat.per_prompt_word_ms * count_words(prompt) as f64
            + lat.per_output_word_ms * longest as f64;
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }
}

/// Text after the last `Question:`/`Query:` marker, minus the trailing
/// answer cue.
fn restated_question(prompt: &str) -> String {
    let start = ["Question:", "Query:"]
        .iter()
        .filter_map(|m| prompt.rfind(m).map(|i| i + m.len()))
        .max()
        .unwrap_or(0);
    let mut tail = prompt[start..].trim();
    for cue in ["Answer:", "Rationale:"] {
        if let Some(stripped) = tail.strip_suffix(cue) {
            tail = stripped.trim_end();
        }
    }
    tail.to_string()
}

/// First `limit` whitespace-delimited words of `text`, original spacing kept.
fn truncate_words(text: &str, limit: usize) -> &str {
    let mut seen = 0;
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word && seen == limit {
                return &text[..i];
            }
            in_word = false;
        } else if !in_word {
            in_word = true;
            seen += 1;
        }
    }
    text
}

impl LlmBackend for MockBackend {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation> {
        let started = Instant::now();
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(prompt.to_string());

        let rule = self
            .fixture
            .rules
            .iter()
            .find(|r| r.contains.matches(prompt));
        let scripted: Vec<String> = match rule {
            Some(r) if r.echo_question => vec![restated_question(prompt)],
            Some(r) => r.responses.clone(),
            None => self.fixture.default.clone(),
        };
        if scripted.is_empty() {
            return Err(Error::Protocol {
                request_id: "mock".into(),
                message: "no scripted response matches the prompt".into(),
            });
        }

        let limit = params.max_new_tokens as usize;
        let texts: Vec<String> = (0..params.n_samples)
            .map(|i| truncate_words(&scripted[i % scripted.len()], limit).to_string())
            .collect();

        let simulated = self.simulated(prompt, &texts);
        let latency = if self.fixture.latency.sleep {
            std::thread::sleep(simulated.saturating_sub(started.elapsed()));
            started.elapsed()
        } else {
            simulated
        };
        Ok(Generation { texts, latency })
    }
}
