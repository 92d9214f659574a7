//! Answer scoring: token F1, Rouge-L F1 and multiple-choice accuracy.
//!
//! Normalization follows the LongBench reference: lowercase, drop ASCII
//! punctuation, drop the articles `a`/`an`/`the`, collapse whitespace.
//! Punctuation is deleted rather than replaced, so `A-Team` becomes `ateam`.
//! Non-ASCII punctuation is kept.
//!
//! Rouge-L tokens skip the article step (LongBench computes Rouge-L on
//! lowercased text without article stripping). Two strings that both
//! normalize to nothing count as an exact match.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    QaF1,
    RougeLF1,
    McqAccuracy,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::QaF1 => "qa_f1",
            MetricKind::RougeLF1 => "rouge_l_f1",
            MetricKind::McqAccuracy => "mcq_accuracy",
        }
    }
}

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn f1_from_overlap(common: usize, pred_len: usize, gold_len: usize) -> f64 {
    if pred_len == 0 && gold_len == 0 {
        return 1.0;
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_len as f64;
    let recall = common as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    f1_from_overlap(common, pred.len(), gold.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

fn best_over_golds(
    prediction: &str,
    golds: &[String],
    tokens: fn(&str) -> Vec<String>,
    score: impl Fn(&[String], &[String]) -> f64,
) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::invalid("gold answer list is empty"));
    }
    let pred = tokens(prediction);
    Ok(golds
        .iter()
        .map(|g| score(&pred, &tokens(g)))
        .fold(0.0, f64::max))
}

/// Token-multiset F1, best over gold answers.
pub fn qa_f1(prediction: &str, golds: &[String]) -> Result<f64> {
    best_over_golds(prediction, golds, normalized_tokens, token_f1)
}

/// Longest-common-subsequence F1, best over golds.
pub fn rouge_l_f1(prediction: &str, golds: &[String]) -> Result<f64> {
    best_over_golds(prediction, golds, rouge_tokens, |p, g| {
        f1_from_overlap(lcs_len(p, g), p.len(), g.len())
    })
}

/// Leading option letter such as `B`, `(B)`, `B.` or `B)`.
fn leading_label(prediction: &str, n_choices: usize) -> Option<usize> {
    let s = prediction.trim_start().trim_start_matches('(');
    let mut chars = s.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let index = (letter as u8 - b'A') as usize;
    let terminated = matches!(chars.next(), None | Some('.' | ')' | ':' | ','));
    (terminated && index < n_choices).then_some(index)
}

fn first_occurrence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// 1 when the earliest choice mentioned in the prediction is the gold one.
/// A leading option letter counts as the earliest mention; on equal
/// positions the longer choice wins.
pub fn mcq_accuracy(prediction: &str, gold_choice: &str, all_choices: &[String]) -> u8 {
    let Some(gold) = all_choices.iter().position(|c| c == gold_choice) else {
        return 0;
    };
    let picked = leading_label(prediction, all_choices.len()).or_else(|| {
        let pred = normalized_tokens(prediction);
        all_choices
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let toks = normalized_tokens(c);
                first_occurrence(&pred, &toks).map(|pos| (pos, std::cmp::Reverse(toks.len()), i))
            })
            .min()
            .map(|(_, _, i)| i)
    });
    u8::from(picked == Some(gold))
}

/// Per-record metric values (each in `[0, 1]`).
pub fn score(
    kind: MetricKind,
    prediction: &str,
    golds: &[String],
    choices: Option<&[String]>,
) -> Result<f64> {
    match kind {
        MetricKind::QaF1 => qa_f1(prediction, golds),
        MetricKind::RougeLF1 => rouge_l_f1(prediction, golds),
        MetricKind::McqAccuracy => {
            let choices = choices.ok_or_else(|| Error::invalid("mcq scoring needs choices"))?;
            if golds.is_empty() {
                return Err(Error::invalid("gold answer list is empty"));
            }
            Ok(golds
                .iter()
                .map(|g| f64::from(mcq_accuracy(prediction, g, choices)))
                .fold(0.0, f64::max))
        }
    }
}

/// Mean of `values` as a percentage, rounded half-up to 2 decimals.
pub fn aggregate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("no records to aggregate"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(round_half_up_2(mean * 100.0))
}

pub(crate) fn round_half_up_2(x: f64) -> f64 {
    // the epsilon absorbs binary error on values like 12.345
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}
