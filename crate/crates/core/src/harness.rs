//! Dataset-level runs, parameter sweeps and rerun manifests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Example, TaskSpec};
use crate::error::{Error, Result};
use crate::llm::{HttpBackend, LlmBackend, LlmEndpointConfig, MockBackend, MockFixture};
use crate::metrics::{self, MetricKind};
use crate::pipeline::{self, FbConfig, Mode, PipelineResult, Query};

/// Where a stage's model lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock {
        /// JSON fixture path, relative to the config file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixture: Option<PathBuf>,
        /// Fixture content; takes precedence over `fixture`. Manifests
        /// always carry it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inline: Option<MockFixture>,
    },
    Http(LlmEndpointConfig),
}

impl BackendSpec {
    pub fn mock(fixture: MockFixture) -> Self {
        BackendSpec::Mock {
            fixture: None,
            inline: Some(fixture),
        }
    }

    /// Resolves relative fixture paths against `base` and loads mock
    /// fixtures inline.
    fn resolved(self, base: &Path) -> Result<Self> {
        match self {
            BackendSpec::Mock { inline: Some(f), fixture } => Ok(BackendSpec::Mock {
                fixture: fixture.map(|p| base.join(p)),
                inline: Some(f),
            }),
            BackendSpec::Mock { fixture: Some(path), inline: None } => {
                let path = base.join(path);
                let loaded = MockFixture::load(&path)?;
                Ok(BackendSpec::Mock {
                    fixture: Some(path),
                    inline: Some(loaded),
                })
            }
            BackendSpec::Mock { fixture: None, inline: None } => Err(Error::Config(
                "mock backend needs `fixture` or `inline`".into(),
            )),
            http @ BackendSpec::Http(_) => Ok(http),
        }
    }

    pub fn build(&self) -> Result<Box<dyn LlmBackend>> {
        match self {
            BackendSpec::Mock { inline: Some(f), .. } => Ok(Box::new(MockBackend::new(f.clone()))),
            BackendSpec::Mock { fixture: Some(p), .. } => Ok(Box::new(MockBackend::from_file(p)?)),
            BackendSpec::Mock { .. } => Err(Error::Config("mock backend has no fixture".into())),
            BackendSpec::Http(cfg) => Ok(Box::new(HttpBackend::new(cfg.clone())?)),
        }
    }

    /// Points the backend at `url`, turning a mock into an HTTP endpoint.
    pub fn with_url(self, url: &str) -> Self {
        match self {
            BackendSpec::Http(mut cfg) => {
                cfg.base_url = url.to_string();
                BackendSpec::Http(cfg)
            }
            BackendSpec::Mock { .. } => BackendSpec::Http(LlmEndpointConfig::new(url, "default")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backends {
    pub forward: BackendSpec,
    #[serde(rename = "final")]
    pub final_backend: BackendSpec,
}

/// A config file: pipeline keys at top level plus `dataset` and a
/// `[backends]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Task registry name.
    pub dataset: String,
    pub pipeline: FbConfig,
    pub backends: Backends,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let dataset = match table.remove("dataset") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(Error::Config("`dataset` must be a string".into())),
            None => return Err(Error::Config("missing field `dataset`".into())),
        };
        let backends = table
            .remove("backends")
            .ok_or_else(|| Error::Config("missing field `backends`".into()))?;
        let backends: Backends = backends
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("backends: {}", e.message())))?;
        let pipeline: FbConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        pipeline.validate()?;
        dataset::task(&dataset)?;
        Ok(Self {
            dataset,
            pipeline,
            backends: Backends {
                forward: backends.forward.resolved(base_dir)?,
                final_backend: backends.final_backend.resolved(base_dir)?,
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn task(&self) -> Result<&'static TaskSpec> {
        dataset::task(&self.dataset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub dataset: String,
    pub mode: Mode,
    pub prediction: String,
    pub answers: Vec<String>,
    pub metric: MetricKind,
    pub score: f64,
    pub latency_s: f64,
    pub result: PipelineResult,
}

/// Runs every example through the configured pipeline with up to `workers`
/// examples in flight. Records come back in dataset order.
pub fn evaluate(
    config: &FbConfig,
    task: &TaskSpec,
    examples: &[Example],
    forward: &dyn LlmBackend,
    final_backend: &dyn LlmBackend,
    workers: usize,
) -> Result<Vec<EvalRecord>> {
    let run_one = |ex: &Example| -> Result<EvalRecord> {
        let query = Query {
            input: &ex.input,
            context: &ex.context,
            choices: ex.all_classes.as_deref(),
        };
        let result = pipeline::run(config, task, &query, forward, final_backend)?;
        let score = metrics::score(task.metric, &result.answer, &ex.answers, ex.all_classes.as_deref())?;
        Ok(EvalRecord {
            id: ex.id.clone(),
            dataset: task.name.clone(),
            mode: config.mode,
            prediction: result.answer.clone(),
            answers: ex.answers.clone(),
            metric: task.metric,
            score,
            latency_s: result.latency.total_s,
            result,
        })
    };

    let workers = workers.max(1).min(examples.len().max(1));
    if workers == 1 {
        return examples.iter().map(run_one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<EvalRecord>>>> =
        Mutex::new((0..examples.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= examples.len() {
                    break;
                }
                let outcome = run_one(&examples[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every example visited"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub mode: Mode,
    /// Percent, two decimals.
    pub score: f64,
    pub mean_latency_s: f64,
    pub mean_final_prompt_words: f64,
    pub examples: usize,
}

impl RunSummary {
    /// `dataset mode score mean_latency_s`
    pub fn line(&self) -> String {
        format!(
            "{} {} {:.2} {:.6}",
            self.dataset,
            self.mode.as_str(),
            self.score,
            self.mean_latency_s
        )
    }
}

pub fn summarize(records: &[EvalRecord]) -> Result<RunSummary> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no records to summarize"))?;
    if records.iter().any(|r| r.metric != first.metric) {
        return Err(Error::invalid("records mix metric kinds"));
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let n = records.len() as f64;
    Ok(RunSummary {
        dataset: first.dataset.clone(),
        mode: first.mode,
        score: metrics::aggregate(&scores)?,
        mean_latency_s: records.iter().map(|r| r.latency_s).sum::<f64>() / n,
        mean_final_prompt_words: records
            .iter()
            .map(|r| r.result.prompt_words.stage3 as f64)
            .sum::<f64>()
            / n,
        examples: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub dataset_path: PathBuf,
    pub workers: usize,
    pub build: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub records_path: PathBuf,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn build_id() -> String {
    match option_env!("FBRAG_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("fbrag-core {}", env!("CARGO_PKG_VERSION")),
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// A configured run over one dataset file.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: RunConfig,
    pub dataset_path: PathBuf,
    pub workers: usize,
}

impl RunPlan {
    pub fn load_examples(&self) -> Result<Vec<Example>> {
        dataset::load_jsonl(&self.dataset_path, self.config.task()?)
    }

    fn backends(&self) -> Result<(Box<dyn LlmBackend>, Box<dyn LlmBackend>)> {
        Ok((
            self.config.backends.forward.build()?,
            self.config.backends.final_backend.build()?,
        ))
    }

    /// Evaluates with the pipeline config replaced by `pipeline`.
    pub fn evaluate_with(&self, pipeline: &FbConfig, examples: &[Example]) -> Result<Vec<EvalRecord>> {
        let (forward, final_backend) = self.backends()?;
        evaluate(
            pipeline,
            self.config.task()?,
            examples,
            forward.as_ref(),
            final_backend.as_ref(),
            self.workers,
        )
    }

    /// Runs the dataset and writes records, manifest and aggregate line
    /// into `out_dir`.
    pub fn run(&self, examples: &[Example], out_dir: &Path) -> Result<RunSummary> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let started = now_ms();
        let records = self.evaluate_with(&self.config.pipeline, examples)?;
        let summary = summarize(&records)?;

        let records_path = out_dir.join(RECORDS_FILE);
        write_records(&records_path, &records)?;
        write_file(&out_dir.join(AGGREGATE_FILE), format!("{}\n", summary.line()).as_bytes())?;
        let manifest = RunManifest {
            config: self.config.clone(),
            dataset_path: std::path::absolute(&self.dataset_path)
                .unwrap_or_else(|_| self.dataset_path.clone()),
            workers: self.workers,
            build: build_id(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            records_path,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
        Ok(summary)
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            config: manifest.config,
            dataset_path: manifest.dataset_path,
            workers: manifest.workers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Final context size in chunks: budget = value * chunk_size_words.
    Chunks,
    /// Forward samples per query.
    Samples,
    /// Final context size in words.
    Budget,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunks" => Ok(SweepAxis::Chunks),
            "samples" => Ok(SweepAxis::Samples),
            "budget" => Ok(SweepAxis::Budget),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (chunks, samples, budget)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn apply(self, base: &FbConfig, value: usize) -> FbConfig {
        let mut config = base.clone();
        match self {
            SweepAxis::Chunks => config.stage2_budget_words = value * base.chunk_size_words,
            SweepAxis::Samples => config.k = value,
            SweepAxis::Budget => config.stage2_budget_words = value,
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub score: f64,
    pub latency_s: f64,
    pub mean_final_prompt_words: f64,
}

/// One dataset run per value; writes `sweep.csv` with
/// `value,score,latency_s,final_prompt_words`.
pub fn sweep(
    plan: &RunPlan,
    examples: &[Example],
    axis: SweepAxis,
    values: &[usize],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let config = axis.apply(&plan.config.pipeline, value);
        config.validate()?;
        let records = plan.evaluate_with(&config, examples)?;
        let summary = summarize(&records)?;
        rows.push(SweepRow {
            value,
            score: summary.score,
            latency_s: summary.mean_latency_s,
            mean_final_prompt_words: summary.mean_final_prompt_words,
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv = String::from("value,score,latency_s,final_prompt_words\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.2},{:.6},{:.1}\n",
            r.value, r.score, r.latency_s, r.mean_final_prompt_words
        ));
    }
    write_file(&out_dir.join(SWEEP_FILE), csv.as_bytes())?;
    Ok(rows)
}
