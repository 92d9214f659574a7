//! Test-only helpers shared by the integration targets.
#![allow(dead_code)]

use fbrag_core::chunker::Chunk;
use fbrag_core::retriever::{tokenize, BM25_B, BM25_K1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn make_chunks(texts: &[String]) -> Vec<Chunk> {
    texts
        .iter()
        .enumerate()
        .map(|(id, t)| Chunk {
            id,
            text: t.clone(),
            word_count: t.split_whitespace().count(),
            char_span: (id, id + 1),
        })
        .collect()
}

/// BM25 by rescanning every chunk for every query term.
pub fn brute_force_bm25(texts: &[String], query: &str) -> Vec<f64> {
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for term in tokenize(query) {
                let tf = doc.iter().filter(|t| **t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.contains(&term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let len = doc.len() as f64;
                score += idf * tf * (BM25_K1 + 1.0)
                    / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len / avg));
            }
            score
        })
        .collect()
}

/// Up to 30 chunks of 1..=40 words and a 1..=20 word query over `t0..t{vocab}`.
pub fn random_corpus(rng: &mut ChaCha8Rng, vocab: usize) -> (Vec<String>, String) {
    let n_chunks = rng.random_range(1..=30);
    let texts = (0..n_chunks)
        .map(|_| {
            let len = rng.random_range(1..=40);
            random_words(rng, vocab, len)
        })
        .collect();
    let q_len = rng.random_range(1..=20);
    (texts, random_words(rng, vocab, q_len))
}

pub fn random_words(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> String {
    (0..len)
        .map(|_| format!("t{}", rng.random_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `a` within `rel` relative tolerance of `b`.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}
