//! Text generation backends and forward-sample parsing.
//!
//! Two backends implement [`LlmBackend`]: [`HttpBackend`] speaks the
//! OpenAI-compatible chat-completions protocol, [`MockBackend`] answers from
//! a scripted fixture and is a pure function of its inputs.

mod http;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, LlmEndpointConfig};
pub use mock::{MockBackend, MockFixture, MockLatency, MockRule, Patterns};

use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;

/// Extra tokens granted to forward sampling on top of a task's answer limit,
/// room for the rationale.
pub const FORWARD_TOKEN_ALLOWANCE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub top_p: f64,
    pub top_k: u32,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub n_samples: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            top_k: 50,
            temperature: 1.0,
            max_new_tokens: 64,
            n_samples: 5,
        }
    }
}

impl GenParams {
    /// Single greedy completion, used for final answers.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            n_samples: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be positive"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::invalid("temperature must be non-negative"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        Ok(())
    }
}

/// Texts returned by one `generate` call and how long the backend took.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub texts: Vec<String>,
    pub latency: Duration,
}

pub trait LlmBackend: Send + Sync {
    /// Exactly `params.n_samples` completions of `prompt`.
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation> {
        (**self).generate(prompt, params)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation> {
        (**self).generate(prompt, params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardSample {
    pub rationale: String,
    pub answer: String,
    pub raw: String,
}

impl ForwardSample {
    /// Text used as a pseudo-query: parsed rationale and answer when either
    /// is present, the raw generation otherwise.
    pub fn forward_text(&self) -> String {
        if self.rationale.is_empty() && self.answer.is_empty() {
            self.raw.clone()
        } else if self.answer.is_empty() {
            self.rationale.clone()
        } else if self.rationale.is_empty() {
            self.answer.clone()
        } else {
            format!("{} {}", self.rationale, self.answer)
        }
    }
}

fn find_ascii_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let hay = haystack.as_bytes();
    let pat = needle.as_bytes();
    if pat.is_empty() || hay.len() < pat.len() {
        return None;
    }
    (from..=hay.len() - pat.len()).find(|&i| hay[i..i + pat.len()].eq_ignore_ascii_case(pat))
}

/// Splits a forward generation into rationale and answer.
///
/// The prompt ends with a `Rationale:` cue, so text before any marker counts
/// as rationale once an `Answer:` marker is found. Markers match
/// case-insensitively; without any marker both fields stay empty.
pub fn parse_forward_sample(raw: &str) -> ForwardSample {
    const RATIONALE: &str = "rationale:";
    const ANSWER: &str = "answer:";

    let explicit = find_ascii_ci(raw, RATIONALE, 0);
    let body_start = explicit.map_or(0, |i| i + RATIONALE.len());
    let answer_at = find_ascii_ci(raw, ANSWER, body_start);

    let (rationale, answer) = match (explicit, answer_at) {
        (_, Some(a)) => (&raw[body_start..a], &raw[a + ANSWER.len()..]),
        (Some(_), None) => (&raw[body_start..], ""),
        (None, None) => ("", ""),
    };
    ForwardSample {
        rationale: rationale.trim().to_string(),
        answer: answer.trim().to_string(),
        raw: raw.to_string(),
    }
}

/// Samples and parsed forward outputs together with the call latency.
#[derive(Debug, Clone)]
pub struct ForwardBatch {
    pub prompt: String,
    pub samples: Vec<ForwardSample>,
    pub latency: Duration,
}

/// Renders the forward template over `context` and draws
/// `params.n_samples` parsed samples. The token limit is the task's answer
/// limit plus [`FORWARD_TOKEN_ALLOWANCE`].
pub fn sample_forward(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    query: &str,
    context: &str,
    choices: Option<&[String]>,
    params: &GenParams,
    answer_token_limit: u32,
) -> Result<ForwardBatch> {
    template.validate()?;
    let params = GenParams {
        max_new_tokens: answer_token_limit + FORWARD_TOKEN_ALLOWANCE,
        ..params.clone()
    };
    params.validate()?;
    let prompt = template.render(context, query, choices);
    let generation = backend.generate(&prompt, &params)?;
    Ok(ForwardBatch {
        prompt,
        samples: generation
            .texts
            .iter()
            .map(|t| parse_forward_sample(t))
            .collect(),
        latency: generation.latency,
    })
}
