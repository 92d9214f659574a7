use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTEXT_SLOT: &str = "{context}";
pub const INPUT_SLOT: &str = "{input}";
pub const CHOICES_SLOT: &str = "{all_classes}";

/// Separator placed between chunks when a selection is rendered as context.
pub const CHUNK_SEPARATOR: &str = "\n\n";

/// Marker the forward-sampling templates end with.
pub const RATIONALE_CUE: &str = "Rationale:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let template = Self {
            id: id.into(),
            text: text.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        for slot in [CONTEXT_SLOT, INPUT_SLOT] {
            if !self.text.contains(slot) {
                return Err(Error::invalid(format!(
                    "template `{}` has no {slot} slot",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn ends_with_rationale_cue(&self) -> bool {
        self.text.trim_end().ends_with(RATIONALE_CUE)
    }

    /// Fills the slots. The context is substituted last so text inside it
    /// that happens to look like a slot is left alone.
    pub fn render(&self, context: &str, input: &str, choices: Option<&[String]>) -> String {
        let choices = choices.map(format_choices).unwrap_or_default();
        let head_tail: Vec<&str> = self.text.splitn(2, CONTEXT_SLOT).collect();
        let fill = |s: &str| s.replace(INPUT_SLOT, input).replace(CHOICES_SLOT, &choices);
        match head_tail.as_slice() {
            [head, tail] => format!("{}{}{}", fill(head), context, fill(tail)),
            _ => fill(&self.text),
        }
    }
}

/// Lettered option list, one per line: `A. first`.
pub fn format_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", choice_label(i), c))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn choice_label(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

/// Joins chunk texts with [`CHUNK_SEPARATOR`].
pub fn join_chunks<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts.into_iter().collect::<Vec<_>>().join(CHUNK_SEPARATOR)
}
