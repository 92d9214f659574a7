//! BM25 over chunks and budgeted selection.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chunker::Chunk;
use crate::error::{Error, Result};

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Per-chunk relevance under both lookups and their mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: usize,
    pub s_backward: f64,
    pub s_forward: f64,
    pub s_combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    slot: usize,
    tf: u32,
}

/// Immutable BM25 index. Scores are returned in the order chunks were given
/// to [`ChunkIndex::build`].
#[derive(Debug, Clone, Default)]
pub struct ChunkIndex {
    ids: Vec<usize>,
    postings: HashMap<String, Vec<Posting>>,
    lengths: Vec<usize>,
    avg_len: f64,
}

impl ChunkIndex {
    pub fn build(chunks: &[Chunk]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(chunks.len());
        for c in chunks {
            if !seen.insert(c.id) {
                return Err(Error::invalid(format!("duplicate chunk id {}", c.id)));
            }
        }

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut lengths = Vec::with_capacity(chunks.len());
        for (slot, chunk) in chunks.iter().enumerate() {
            let tokens = tokenize(&chunk.text);
            lengths.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { slot, tf: count });
            }
        }
        let avg_len = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        };
        Ok(Self {
            ids: chunks.iter().map(|c| c.id).collect(),
            postings,
            lengths,
            avg_len,
        })
    }

    /// Number of indexed chunks.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn chunk_ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn chunk_len(&self, slot: usize) -> usize {
        self.lengths[slot]
    }

    /// Number of chunks containing `term`.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Occurrences of `term` in the chunk at `slot`.
    pub fn term_freq(&self, term: &str, slot: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|ps| ps.iter().find(|p| p.slot == slot))
            .map_or(0, |p| p.tf)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every chunk against `query`. Repeated query tokens
    /// contribute once per occurrence.
    pub fn score_all(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for p in postings {
                let tf = f64::from(p.tf);
                let norm = 1.0 - BM25_B + BM25_B * self.lengths[p.slot] as f64 / self.avg_len;
                scores[p.slot] += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
        scores
    }
}

/// Greedy budgeted pick: highest score first (lower id wins ties), stopping
/// at the first chunk that would overflow `budget` words. A positive budget
/// always admits the top chunk. Returned ids are ascending.
pub fn select_by_budget(scores: &[f64], chunks: &[Chunk], budget: usize) -> Vec<usize> {
    debug_assert_eq!(scores.len(), chunks.len());
    if budget == 0 || chunks.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(chunks[a].id.cmp(&chunks[b].id))
    });

    let mut used = 0usize;
    let mut picked = Vec::new();
    for slot in order {
        let words = chunks[slot].word_count;
        if used + words > budget && !picked.is_empty() {
            break;
        }
        used += words;
        picked.push(chunks[slot].id);
        if used >= budget {
            break;
        }
    }
    picked.sort_unstable();
    picked
}
