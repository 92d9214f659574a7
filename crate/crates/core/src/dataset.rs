//! Benchmark examples and per-dataset task settings.
//!
//! Task settings (metric, answer token limit, the three prompt templates)
//! live in `data/tasks.json` so they can be reviewed without reading code.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::llm::FORWARD_TOKEN_ALLOWANCE;
use crate::metrics::MetricKind;
use crate::prompt::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(rename = "_id")]
    pub id: String,
    pub input: String,
    pub context: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all_classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub display_name: String,
    pub metric: MetricKind,
    /// Answer token limit for final generation.
    pub max_new_tokens: u32,
    pub num_queries: usize,
    pub avg_length_words: usize,
    pub template_final: String,
    pub template_self_route: String,
    pub template_stage2: String,
}

impl TaskSpec {
    /// Token limit for forward sampling: answer limit plus rationale room.
    pub fn stage2_max_new_tokens(&self) -> u32 {
        self.max_new_tokens + FORWARD_TOKEN_ALLOWANCE
    }

    pub fn final_template(&self) -> PromptTemplate {
        PromptTemplate {
            id: format!("{}/final", self.name),
            text: self.template_final.clone(),
        }
    }

    pub fn self_route_template(&self) -> PromptTemplate {
        PromptTemplate {
            id: format!("{}/self_route", self.name),
            text: self.template_self_route.clone(),
        }
    }

    pub fn stage2_template(&self) -> PromptTemplate {
        PromptTemplate {
            id: format!("{}/stage2", self.name),
            text: self.template_stage2.clone(),
        }
    }

    pub fn is_mcq(&self) -> bool {
        self.metric == MetricKind::McqAccuracy
    }
}

const TASKS_JSON: &str = include_str!("../data/tasks.json");

/// The nine supported datasets keyed by lower_snake_case name.
pub fn registry() -> &'static BTreeMap<String, TaskSpec> {
    static REGISTRY: OnceLock<BTreeMap<String, TaskSpec>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let tasks: Vec<TaskSpec> =
            serde_json::from_str(TASKS_JSON).expect("bundled tasks.json is valid");
        tasks.into_iter().map(|t| (t.name.clone(), t)).collect()
    })
}

pub fn task(name: &str) -> Result<&'static TaskSpec> {
    registry().get(name).ok_or_else(|| {
        let known: Vec<&str> = registry().keys().map(String::as_str).collect();
        Error::Config(format!(
            "unknown dataset `{name}` (known: {})",
            known.join(", ")
        ))
    })
}

fn schema(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) if key == "_id" => Ok(n.to_string()),
        Some(_) => Err(schema(line, format!("field \"{key}\" must be a string"))),
        None => Err(schema(line, format!("missing required field \"{key}\""))),
    }
}

fn string_list(value: &Value, key: &str, line: usize) -> Result<Vec<String>> {
    let items = value
        .as_array()
        .ok_or_else(|| schema(line, format!("field \"{key}\" must be an array of strings")))?;
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(line, format!("field \"{key}\" must contain only strings")))
        })
        .collect()
}

fn parse_line(raw: &str, line: usize, spec: &TaskSpec) -> Result<Example> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| schema(line, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(line, "expected a JSON object"))?;

    let answers = match obj.get("answers") {
        Some(v) => string_list(v, "answers", line)?,
        None => return Err(schema(line, "missing required field \"answers\"")),
    };
    if answers.is_empty() {
        return Err(schema(line, "field \"answers\" is empty"));
    }
    let all_classes = match obj.get("all_classes") {
        None | Some(Value::Null) => None,
        Some(v) => Some(string_list(v, "all_classes", line)?),
    };
    match (&all_classes, spec.is_mcq()) {
        (None, true) => {
            return Err(schema(
                line,
                format!("dataset {} needs \"all_classes\"", spec.name),
            ))
        }
        (Some(_), false) => {
            return Err(schema(
                line,
                format!("\"all_classes\" given for non-choice dataset {}", spec.name),
            ))
        }
        (Some(c), true) if c.is_empty() => {
            return Err(schema(line, "field \"all_classes\" is empty"))
        }
        _ => {}
    }

    Ok(Example {
        id: required_str(obj, "_id", line)?,
        input: required_str(obj, "input", line)?,
        context: required_str(obj, "context", line)?,
        answers,
        all_classes,
    })
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_jsonl(text: &str, spec: &TaskSpec) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1, spec))
        .collect()
}

pub fn load_jsonl(path: impl AsRef<Path>, spec: &TaskSpec) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, spec)
}

pub fn to_jsonl(examples: &[Example]) -> String {
    examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("examples serialize") + "\n")
        .collect()
}
