//! Shared inputs for the criterion benches.

use fbrag_core::llm::{parse_forward_sample, ForwardSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A document of `words` words drawn from a Zipf-ish vocabulary of `vocab`
/// terms, so common terms repeat like function words do.
pub fn document(seed: u64, words: usize, vocab: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words)
        .map(|_| {
            let r: f64 = rng.random();
            format!("w{}", ((vocab as f64).powf(r) as usize).saturating_sub(1))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn samples(seed: u64, k: usize, words: usize, vocab: usize) -> Vec<ForwardSample> {
    (0..k)
        .map(|i| {
            let text = document(seed.wrapping_add(i as u64), words, vocab);
            parse_forward_sample(&format!("Rationale: {text} Answer: w1 w2"))
        })
        .collect()
}
