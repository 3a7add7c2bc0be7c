//! Pulling the usable answer out of a raw completion.

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Shape of the answer expected in a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerFormat {
    /// A fenced code block containing SQL; the last block wins.
    Sql,
    /// A free-form reply ending in an `Answer:` line.
    Freeform,
}

/// Extracts the answer from `raw` per `format`. A completion with no
/// extractable block is a parse error carrying the raw text.
pub fn extract_answer(raw: &str, format: AnswerFormat) -> Result<String, GatewayError> {
    let found = match format {
        AnswerFormat::Sql => last_fenced_block(raw),
        AnswerFormat::Freeform => last_answer_line(raw),
    };
    found.ok_or_else(|| GatewayError::AnswerExtraction { raw: raw.to_string() })
}

/// Content of the last non-empty fenced code block (``` delimiters, optional
/// language tag on the opening fence).
fn last_fenced_block(raw: &str) -> Option<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some(String::new()),
            }
            continue;
        }
        if let Some(block) = current.as_mut() {
            if !block.is_empty() {
                block.push('\n');
            }
            block.push_str(line);
        }
    }
    blocks
        .into_iter()
        .rev()
        .map(|b| b.trim().to_string())
        .find(|b| !b.is_empty())
}

/// Text after the last `Answer:` marker, taken to the end of its line.
fn last_answer_line(raw: &str) -> Option<String> {
    raw.lines()
        .rev()
        .find_map(|line| line.find("Answer:").map(|pos| line[pos + "Answer:".len()..].trim()))
        .filter(|answer| !answer.is_empty())
        .map(String::from)
}
