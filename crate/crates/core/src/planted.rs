//! Synthetic haystacks with one planted needle chunk.
//!
//! The query shares no token with the needle; it only matches distractor
//! chunks. Exactly one of the scripted forward samples talks about the
//! needle's bridge entity and answer, the rest are off-topic. These fixtures
//! stand in for an ideal rationale/answer pair and let the forward lookup be
//! checked without a real model.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{to_jsonl, Example};
use crate::error::{Error, Result};
use crate::llm::{MockFixture, MockLatency, MockRule, Patterns};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_chunks: usize,
    pub chunk_size: usize,
    /// Chunks seeded with the query terms.
    pub distractors: usize,
    pub query_terms: usize,
    /// Forward samples per call; one of them is about the needle.
    pub k: usize,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n_chunks: 12,
            chunk_size: 40,
            distractors: 3,
            query_terms: 3,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedExample {
    pub id: String,
    pub query: String,
    pub haystack: String,
    pub needle_chunk_id: usize,
    pub distractor_ids: Vec<usize>,
    pub gold_answer: String,
    pub gold_rationale: String,
    /// Scripted forward generations, `k` of them.
    pub forward_samples: Vec<String>,
    /// Token unique to the needle chunk.
    pub marker: String,
}

const FILLER_POOL: usize = 400;

/// Builds one planted example; all tokens are namespaced by `tag` so that
/// examples generated with different tags never share query or answer words.
pub fn plant(seed: u64, tag: &str, spec: &PlantSpec) -> PlantedExample {
    assert!(spec.n_chunks > spec.distractors, "need room for the needle");
    assert!(spec.chunk_size >= 12, "chunks too small to plant into");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let query_terms: Vec<String> = (0..spec.query_terms).map(|i| format!("{tag}q{i}")).collect();
    let entities: Vec<String> = (0..3).map(|i| format!("{tag}ent{i}")).collect();
    let answer_terms: Vec<String> = (0..2).map(|i| format!("{tag}ans{i}")).collect();
    let marker = entities[0].clone();

    let mut slots: Vec<usize> = (0..spec.n_chunks).collect();
    slots.shuffle(&mut rng);
    let needle = slots[0];
    let mut distractor_ids: Vec<usize> = slots[1..=spec.distractors].to_vec();
    distractor_ids.sort_unstable();

    let mut chunks = Vec::with_capacity(spec.n_chunks);
    for id in 0..spec.n_chunks {
        let mut words: Vec<String> = (0..spec.chunk_size)
            .map(|_| format!("filler{}", rng.random_range(0..FILLER_POOL)))
            .collect();
        let planted: Vec<String> = if id == needle {
            entities
                .iter()
                .chain(&answer_terms)
                .chain(&entities)
                .cloned()
                .collect()
        } else if distractor_ids.contains(&id) {
            query_terms.iter().chain(&query_terms).cloned().collect()
        } else {
            Vec::new()
        };
        for (pos, word) in planted.into_iter().enumerate() {
            words[pos * 2 + 1] = word;
        }
        chunks.push(words.join(" "));
    }

    let gold_answer = answer_terms.join(" ");
    let gold_rationale = format!(
        "The passage about {} and {} links it to {}.",
        entities[0], entities[1], entities[2]
    );
    let needle_pos = rng.random_range(0..spec.k);
    let forward_samples = (0..spec.k)
        .map(|i| {
            if i == needle_pos {
                format!("Rationale: {gold_rationale} Answer: {gold_answer}")
            } else {
                format!("Rationale: Perhaps {tag}noise{i}a or {tag}noise{i}b. Answer: {tag}noise{i}c")
            }
        })
        .collect();

    PlantedExample {
        id: format!("{tag}-{seed}"),
        query: format!("Which {}?", query_terms.join(" ")),
        haystack: chunks.join("\n"),
        needle_chunk_id: needle,
        distractor_ids,
        gold_answer,
        gold_rationale,
        forward_samples,
        marker,
    }
}

/// Marker that only the Self-Route first-pass templates contain.
pub const SELF_ROUTE_MARKER: &str = "write “unanswerable”";

impl PlantedExample {
    pub fn example(&self) -> Example {
        Example {
            id: self.id.clone(),
            input: self.query.clone(),
            context: self.haystack.clone(),
            answers: vec![self.gold_answer.clone()],
            all_classes: None,
        }
    }

    /// Forward model: the scripted samples whenever the question is asked.
    pub fn forward_rule(&self) -> MockRule {
        MockRule {
            contains: Patterns::One(format!("Question: {}", self.query)),
            responses: self.forward_samples.clone(),
            echo_question: false,
        }
    }

    /// Final model: the gold answer when the needle is in the prompt,
    /// `unanswerable` for a Self-Route first pass without it.
    pub fn final_rules(&self) -> Vec<MockRule> {
        let asked = format!("Question: {}", self.query);
        vec![
            MockRule {
                contains: Patterns::All(vec![asked.clone(), self.marker.clone()]),
                responses: vec![self.gold_answer.clone()],
                echo_question: false,
            },
            MockRule {
                contains: Patterns::All(vec![asked, SELF_ROUTE_MARKER.to_string()]),
                responses: vec!["unanswerable".into()],
                echo_question: false,
            },
        ]
    }
}

/// `n` planted examples with matching forward and final fixtures. Unmatched
/// final prompts answer `unknown`.
pub fn synthetic_suite(
    seed: u64,
    n: usize,
    spec: &PlantSpec,
    latency: MockLatency,
) -> (Vec<PlantedExample>, MockFixture, MockFixture) {
    let planted: Vec<PlantedExample> = (0..n)
        .map(|i| plant(seed.wrapping_add(i as u64), &format!("x{i}"), spec))
        .collect();
    let forward = MockFixture {
        rules: planted.iter().map(PlantedExample::forward_rule).collect(),
        default: vec!["Rationale: nothing relevant Answer: unknown".into()],
        latency: latency.clone(),
    };
    let final_fixture = MockFixture {
        rules: planted.iter().flat_map(PlantedExample::final_rules).collect(),
        default: vec!["unknown".into()],
        latency,
    };
    (planted, forward, final_fixture)
}

/// Files written by [`write_suite`].
#[derive(Debug, Clone)]
pub struct SuiteFiles {
    pub dataset: PathBuf,
    pub forward_fixture: PathBuf,
    pub final_fixture: PathBuf,
    pub config: PathBuf,
}

/// Writes a synthetic suite into `dir`: a JSONL dataset, both mock fixtures
/// and a forward-only run config that points at them.
pub fn write_suite(
    dir: &Path,
    seed: u64,
    n: usize,
    spec: &PlantSpec,
    latency: MockLatency,
) -> Result<SuiteFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (planted, forward, final_fixture) = synthetic_suite(seed, n, spec, latency);
    let examples: Vec<Example> = planted.iter().map(PlantedExample::example).collect();
    let files = SuiteFiles {
        dataset: dir.join("synthetic.jsonl"),
        forward_fixture: dir.join("forward.json"),
        final_fixture: dir.join("final.json"),
        config: dir.join("config.toml"),
    };
    let config = format!(
        "dataset = \"hotpotqa\"\n\
         mode = \"fb\"\n\
         eta_b = 0.0\n\
         eta_f = 1.0\n\
         k = {k}\n\
         chunk_size_words = {size}\n\
         stage2_budget_words = {budget}\n\
         \n\
         [backends.forward]\n\
         kind = \"mock\"\n\
         fixture = \"forward.json\"\n\
         \n\
         [backends.final]\n\
         kind = \"mock\"\n\
         fixture = \"final.json\"\n",
        k = spec.k,
        size = spec.chunk_size,
        budget = 2 * spec.chunk_size,
    );
    let fixture_json = |f: &MockFixture| serde_json::to_string_pretty(f).expect("fixtures serialize");
    for (path, body) in [
        (&files.dataset, to_jsonl(&examples)),
        (&files.forward_fixture, fixture_json(&forward)),
        (&files.final_fixture, fixture_json(&final_fixture)),
        (&files.config, config),
    ] {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}
