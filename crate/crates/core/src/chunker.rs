//! Fixed-size word chunking.
//!
//! A word is a maximal run of non-whitespace characters. Chunks never split
//! a word and carry their character span in the source text so selected
//! chunks can be put back in document order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default chunk size in words.
pub const DEFAULT_CHUNK_SIZE: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// Zero-based position within the document.
    pub id: usize,
    pub text: String,
    pub word_count: usize,
    /// `[start, end)` in characters (not bytes) of the source text.
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct WordSpan {
    byte_start: usize,
    byte_end: usize,
    char_start: usize,
    char_end: usize,
}

fn word_spans(text: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut current: Option<WordSpan> = None;
    for (char_pos, (byte_pos, ch)) in text.char_indices().enumerate() {
        if ch.is_whitespace() {
            if let Some(span) = current.take() {
                spans.push(span);
            }
        } else {
            let end = byte_pos + ch.len_utf8();
            match current.as_mut() {
                Some(span) => {
                    span.byte_end = end;
                    span.char_end = char_pos + 1;
                }
                None => {
                    current = Some(WordSpan {
                        byte_start: byte_pos,
                        byte_end: end,
                        char_start: char_pos,
                        char_end: char_pos + 1,
                    })
                }
            }
        }
    }
    spans.extend(current);
    spans
}

/// Number of whitespace-delimited words in `text`.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits `text` into consecutive chunks of `chunk_size` words; the last
/// chunk holds the remainder.
pub fn chunk_document(text: &str, chunk_size: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be at least 1"));
    }
    let words = word_spans(text);
    let chunks = words
        .chunks(chunk_size)
        .enumerate()
        .map(|(id, group)| {
            let first = group[0];
            let last = group[group.len() - 1];
            Chunk {
                id,
                text: text[first.byte_start..last.byte_end].to_string(),
                word_count: group.len(),
                char_span: (first.char_start, last.char_end),
            }
        })
        .collect();
    Ok(chunks)
}
