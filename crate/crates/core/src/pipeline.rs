//! Three-stage forward-backward retrieval and the baselines it is compared
//! against.
//!
//! Stage I narrows the context with BM25 against the query. Stage II asks a
//! small model for rationale/answer samples over that narrowed context and
//! rescores *every* chunk of the original context by a weighted mix of its
//! similarity to the query (backward) and its best similarity to any sample
//! (forward). Stage III answers from the top chunks under the final budget.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_document, count_words, Chunk};
use crate::dataset::{self, TaskSpec};
use crate::error::{Error, Result, Stage};
use crate::llm::{sample_forward, ForwardSample, GenParams, LlmBackend};
use crate::prompt::{join_chunks, PromptTemplate};
use crate::retriever::{select_by_budget, ChunkIndex, ScoredChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fb,
    Vanilla,
    Op,
    SelfRoute,
    LongContext,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Fb,
        Mode::Vanilla,
        Mode::Op,
        Mode::SelfRoute,
        Mode::LongContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fb => "fb",
            Mode::Vanilla => "vanilla",
            Mode::Op => "op",
            Mode::SelfRoute => "self_route",
            Mode::LongContext => "long_context",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// How backward and forward score vectors are scaled before mixing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    Minmax,
}

fn default_k() -> usize {
    5
}
fn default_stage1_budget() -> usize {
    6000
}
fn default_stage2_budget() -> usize {
    1500
}
fn default_chunk_size() -> usize {
    crate::chunker::DEFAULT_CHUNK_SIZE
}
fn default_final_params() -> GenParams {
    GenParams::greedy()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbConfig {
    pub mode: Mode,
    pub eta_b: f64,
    pub eta_f: f64,
    /// Forward samples drawn in Stage II.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_stage1_budget")]
    pub stage1_budget_words: usize,
    #[serde(default = "default_stage2_budget")]
    pub stage2_budget_words: usize,
    #[serde(default = "default_chunk_size")]
    pub chunk_size_words: usize,
    #[serde(default)]
    pub normalization: Normalization,
    /// Stage II sampling. `n_samples` is overridden by `k` and
    /// `max_new_tokens` by the task limit.
    #[serde(default)]
    pub forward: GenParams,
    /// Final and baseline generation; `max_new_tokens` comes from the task.
    #[serde(rename = "final", default = "default_final_params")]
    pub final_gen: GenParams,
    /// Registry name whose Stage II template to use; the task's own if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_template: Option<String>,
    /// Registry name whose answer and Self-Route templates to use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_template: Option<String>,
}

impl FbConfig {
    /// Forward-only weighting (`eta_b = 0`, `eta_f = 1`) with defaults.
    pub fn forward_only() -> Self {
        Self {
            mode: Mode::Fb,
            eta_b: 0.0,
            eta_f: 1.0,
            k: default_k(),
            stage1_budget_words: default_stage1_budget(),
            stage2_budget_words: default_stage2_budget(),
            chunk_size_words: default_chunk_size(),
            normalization: Normalization::default(),
            forward: GenParams::default(),
            final_gen: GenParams::greedy(),
            stage2_template: None,
            final_template: None,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_b >= 0.0 && self.eta_f >= 0.0) {
            return Err(Error::Config("eta_b and eta_f must be non-negative".into()));
        }
        if self.eta_b + self.eta_f <= 0.0 {
            return Err(Error::Config("eta_b + eta_f must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.chunk_size_words == 0 {
            return Err(Error::Config("chunk_size_words must be at least 1".into()));
        }
        self.forward
            .validate()
            .and(self.final_gen.validate())
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Templates resolved against the task registry.
#[derive(Debug, Clone)]
pub struct Templates {
    pub stage2: PromptTemplate,
    pub answer: PromptTemplate,
    pub self_route: PromptTemplate,
}

impl Templates {
    pub fn resolve(config: &FbConfig, task: &TaskSpec) -> Result<Self> {
        let lookup = |id: &Option<String>| match id {
            Some(name) => dataset::task(name),
            None => Ok(task),
        };
        let stage2_src = lookup(&config.stage2_template)?;
        let final_src = lookup(&config.final_template)?;
        let templates = Self {
            stage2: stage2_src.stage2_template(),
            answer: final_src.final_template(),
            self_route: final_src.self_route_template(),
        };
        for t in [&templates.stage2, &templates.answer, &templates.self_route] {
            t.validate()?;
        }
        Ok(templates)
    }
}

/// One question over one long context.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub input: &'a str,
    pub context: &'a str,
    pub choices: Option<&'a [String]>,
}

impl<'a> Query<'a> {
    pub fn new(input: &'a str, context: &'a str) -> Self {
        Self {
            input,
            context,
            choices: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    /// Forward sampling; the samples of one call run concurrently, so this
    /// is the slowest of them.
    pub stage2_s: f64,
    /// Final generation(s).
    pub stage3_s: f64,
    /// Every final-generation call in order (two for a Self-Route fallback).
    pub generations_s: Vec<f64>,
    pub total_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptWords {
    pub stage2: usize,
    pub stage3: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub mode: Mode,
    pub answer: String,
    /// Stage I selection, ascending (empty for baselines).
    pub c1_ids: Vec<usize>,
    /// Final selection, ascending.
    pub c2_ids: Vec<usize>,
    /// Order in which the final chunks appear in the prompt.
    pub prompt_order: Vec<usize>,
    /// Stage II scores for every chunk (FB mode only).
    pub scored: Vec<ScoredChunk>,
    pub samples: Vec<ForwardSample>,
    /// Self-Route fell back to the full context.
    #[serde(default)]
    pub fallback: bool,
    pub latency: StageLatency,
    pub prompt_words: PromptWords,
    /// The last prompt sent for the final answer. Not serialized.
    #[serde(skip)]
    pub final_prompt: String,
}

/// Chunked context plus its BM25 index.
#[derive(Debug, Clone)]
pub struct PreparedContext {
    pub chunks: Vec<Chunk>,
    pub index: ChunkIndex,
}

impl PreparedContext {
    pub fn new(context: &str, chunk_size: usize) -> Result<Self> {
        let chunks = chunk_document(context, chunk_size).map_err(|e| e.at(Stage::Chunking))?;
        let index = ChunkIndex::build(&chunks).map_err(|e| e.at(Stage::Chunking))?;
        Ok(Self { chunks, index })
    }

    pub fn total_words(&self) -> usize {
        self.chunks.iter().map(|c| c.word_count).sum()
    }

    fn texts<'a>(&'a self, ids: &'a [usize]) -> impl Iterator<Item = &'a str> + 'a {
        ids.iter().map(move |&id| self.chunks[id].text.as_str())
    }
}

/// Stage I: BM25 against the query under `budget` words.
pub fn stage1_recall(query: &str, chunks: &[Chunk], index: &ChunkIndex, budget: usize) -> Vec<usize> {
    select_by_budget(&index.score_all(query), chunks, budget)
}

/// Per chunk, the best BM25 score against any sample's forward text.
pub fn forward_score(index: &ChunkIndex, samples: &[ForwardSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("forward scoring needs at least one sample"));
    }
    let mut best = vec![f64::NEG_INFINITY; index.len()];
    for sample in samples {
        for (b, s) in best.iter_mut().zip(index.score_all(&sample.forward_text())) {
            *b = b.max(s);
        }
    }
    Ok(best)
}

/// Maps `scores` onto `[0, 1]`; a constant vector maps to zeros.
pub fn min_max(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / span).collect()
}

/// Stage II scores over all indexed chunks. With `eta_f == 0` the samples
/// may be empty and the forward component is zero.
pub fn stage2_fb_scores(
    query: &str,
    index: &ChunkIndex,
    samples: &[ForwardSample],
    eta_b: f64,
    eta_f: f64,
    normalization: Normalization,
) -> Result<Vec<ScoredChunk>> {
    let forward = if samples.is_empty() && eta_f == 0.0 {
        vec![0.0; index.len()]
    } else {
        forward_score(index, samples)?
    };
    let backward = index.score_all(query);
    let (backward, forward) = match normalization {
        Normalization::None => (backward, forward),
        Normalization::Minmax => (min_max(&backward), min_max(&forward)),
    };
    Ok(index
        .chunk_ids()
        .iter()
        .zip(backward.iter().zip(&forward))
        .map(|(&chunk_id, (&b, &f))| ScoredChunk {
            chunk_id,
            s_backward: b,
            s_forward: f,
            s_combined: eta_b * b + eta_f * f,
        })
        .collect())
}

/// Budgeted pick by combined score, ascending ids.
pub fn select_context(scored: &[ScoredChunk], chunks: &[Chunk], budget: usize) -> Vec<usize> {
    let combined: Vec<f64> = scored.iter().map(|s| s.s_combined).collect();
    select_by_budget(&combined, chunks, budget)
}

/// Final answer text, the rendered prompt and the call latency.
#[derive(Debug, Clone)]
pub struct Answer {
    pub text: String,
    pub prompt: String,
    pub latency: Duration,
}

/// Stage III: answer from `chunk_texts`, joined in the order given.
pub fn stage3_generate<'a>(
    query: &Query<'_>,
    chunk_texts: impl IntoIterator<Item = &'a str>,
    template: &PromptTemplate,
    backend: &dyn LlmBackend,
    params: &GenParams,
) -> Result<Answer> {
    let texts: Vec<&str> = chunk_texts.into_iter().collect();
    if texts.is_empty() {
        return Err(Error::invalid("final context is empty"));
    }
    template.validate()?;
    let prompt = template.render(&join_chunks(texts), query.input, query.choices);
    let generation = backend.generate(&prompt, &GenParams { n_samples: 1, ..params.clone() })?;
    let text = generation
        .texts
        .into_iter()
        .next()
        .ok_or_else(|| Error::Protocol {
            request_id: String::new(),
            message: "backend returned no completion".into(),
        })?;
    Ok(Answer {
        text: text.trim().to_string(),
        prompt,
        latency: generation.latency,
    })
}

fn final_params(config: &FbConfig, task: &TaskSpec) -> GenParams {
    GenParams {
        max_new_tokens: task.max_new_tokens,
        n_samples: 1,
        ..config.final_gen.clone()
    }
}

/// Runs the three stages over `query.context`.
pub fn run_fb_rag(
    config: &FbConfig,
    task: &TaskSpec,
    query: &Query<'_>,
    forward_backend: &dyn LlmBackend,
    final_backend: &dyn LlmBackend,
) -> Result<PipelineResult> {
    if config.mode != Mode::Fb {
        return Err(Error::invalid(format!(
            "run_fb_rag called with mode {}",
            config.mode.as_str()
        )));
    }
    config.validate()?;
    let templates = Templates::resolve(config, task)?;
    let ctx = PreparedContext::new(query.context, config.chunk_size_words)?;

    let c1_ids = stage1_recall(query.input, &ctx.chunks, &ctx.index, config.stage1_budget_words);

    // no forward weight: the samples could not change the ranking
    let (samples, stage2_latency, stage2_words) = if config.eta_f > 0.0 && !c1_ids.is_empty() {
        let params = GenParams {
            n_samples: config.k,
            ..config.forward.clone()
        };
        let batch = sample_forward(
            forward_backend,
            &templates.stage2,
            query.input,
            &join_chunks(ctx.texts(&c1_ids)),
            query.choices,
            &params,
            task.max_new_tokens,
        )
        .map_err(|e| e.at(Stage::ForwardSampling))?;
        let words = count_words(&batch.prompt);
        (batch.samples, batch.latency, words)
    } else {
        (Vec::new(), Duration::ZERO, 0)
    };

    let scored = stage2_fb_scores(
        query.input,
        &ctx.index,
        &samples,
        config.eta_b,
        config.eta_f,
        config.normalization,
    )
    .map_err(|e| e.at(Stage::Precision))?;
    let c2_ids = select_context(&scored, &ctx.chunks, config.stage2_budget_words);

    let answer = stage3_generate(
        query,
        ctx.texts(&c2_ids),
        &templates.answer,
        final_backend,
        &final_params(config, task),
    )
    .map_err(|e| e.at(Stage::Generation))?;

    let stage2_s = stage2_latency.as_secs_f64();
    let stage3_s = answer.latency.as_secs_f64();
    Ok(PipelineResult {
        mode: Mode::Fb,
        answer: answer.text,
        c1_ids,
        prompt_order: c2_ids.clone(),
        c2_ids,
        scored,
        samples,
        fallback: false,
        latency: StageLatency {
            stage2_s,
            stage3_s,
            generations_s: vec![stage3_s],
            total_s: stage2_s + stage3_s,
        },
        prompt_words: PromptWords {
            stage2: stage2_words,
            stage3: count_words(&answer.prompt),
        },
        final_prompt: answer.prompt,
    })
}

/// True when a Self-Route first pass declined to answer.
pub fn is_unanswerable(answer: &str) -> bool {
    crate::metrics::normalize_answer(answer).contains("unanswerable")
}

/// Long Context, Vanilla RAG, OP RAG or Self-Route.
pub fn run_baseline(
    config: &FbConfig,
    task: &TaskSpec,
    query: &Query<'_>,
    final_backend: &dyn LlmBackend,
) -> Result<PipelineResult> {
    config.validate()?;
    let templates = Templates::resolve(config, task)?;
    let ctx = PreparedContext::new(query.context, config.chunk_size_words)?;
    let params = final_params(config, task);
    let all_ids: Vec<usize> = ctx.chunks.iter().map(|c| c.id).collect();

    let (c2_ids, prompt_order) = match config.mode {
        Mode::LongContext => (all_ids.clone(), all_ids.clone()),
        Mode::Vanilla | Mode::Op | Mode::SelfRoute => {
            let scores = ctx.index.score_all(query.input);
            let ids = select_by_budget(&scores, &ctx.chunks, config.stage2_budget_words);
            let mut order = ids.clone();
            if config.mode == Mode::Vanilla {
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            }
            (ids, order)
        }
        Mode::Fb => {
            return Err(Error::invalid("run_baseline called with mode fb"));
        }
    };

    let first_template = if config.mode == Mode::SelfRoute {
        &templates.self_route
    } else {
        &templates.answer
    };
    let first = stage3_generate(query, ctx.texts(&prompt_order), first_template, final_backend, &params)
        .map_err(|e| e.at(Stage::Generation))?;

    let mut generations = vec![first.latency.as_secs_f64()];
    let mut fallback = false;
    let answer = if config.mode == Mode::SelfRoute && is_unanswerable(&first.text) {
        fallback = true;
        let second = stage3_generate(query, ctx.texts(&all_ids), &templates.answer, final_backend, &params)
            .map_err(|e| e.at(Stage::Generation))?;
        generations.push(second.latency.as_secs_f64());
        second
    } else {
        first
    };

    let stage3_s: f64 = generations.iter().sum();
    Ok(PipelineResult {
        mode: config.mode,
        answer: answer.text,
        c1_ids: Vec::new(),
        c2_ids: if fallback { all_ids.clone() } else { c2_ids },
        prompt_order: if fallback { all_ids } else { prompt_order },
        scored: Vec::new(),
        samples: Vec::new(),
        fallback,
        latency: StageLatency {
            stage2_s: 0.0,
            stage3_s,
            generations_s: generations,
            total_s: stage3_s,
        },
        prompt_words: PromptWords {
            stage2: 0,
            stage3: count_words(&answer.prompt),
        },
        final_prompt: answer.prompt,
    })
}

/// Dispatches on `config.mode`.
pub fn run(
    config: &FbConfig,
    task: &TaskSpec,
    query: &Query<'_>,
    forward_backend: &dyn LlmBackend,
    final_backend: &dyn LlmBackend,
) -> Result<PipelineResult> {
    match config.mode {
        Mode::Fb => run_fb_rag(config, task, query, forward_backend, final_backend),
        _ => run_baseline(config, task, query, final_backend),
    }
}
