//! Wire-level value types shared by every backend.

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Speaker of a [`ChatTurn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One message of a chat transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, content: content.into() }
    }
}

/// Checks that every turn is non-empty and that roles alternate
/// user/assistant after an optional leading system turn.
pub fn validate_transcript(turns: &[ChatTurn]) -> Result<(), GatewayError> {
    if turns.is_empty() {
        return Err(GatewayError::InvalidTranscript("empty transcript".into()));
    }
    let mut expected = Role::User;
    for (i, turn) in turns.iter().enumerate() {
        if turn.content.is_empty() {
            return Err(GatewayError::InvalidTranscript(format!("turn {i} has empty content")));
        }
        match turn.role {
            Role::System if i == 0 => continue,
            Role::System => {
                return Err(GatewayError::InvalidTranscript(format!(
                    "system turn at position {i}; only the first turn may be system"
                )));
            }
            role if role == expected => {
                expected = if role == Role::User { Role::Assistant } else { Role::User };
            }
            role => {
                return Err(GatewayError::InvalidTranscript(format!(
                    "expected {} at position {i}, found {}",
                    expected.as_str(),
                    role.as_str()
                )));
            }
        }
    }
    Ok(())
}

/// Canonical byte rendering of a transcript. The mock backend hashes this,
/// and transcript dumps use it, so it must stay stable.
pub fn render_transcript(turns: &[ChatTurn]) -> String {
    let mut out = String::new();
    for turn in turns {
        out.push_str("==== ");
        out.push_str(turn.role.as_str());
        out.push_str(" ====\n");
        out.push_str(&turn.content);
        out.push('\n');
    }
    out
}

/// Decoding controls for one generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_new_tokens: usize,
    /// How many completions to request in one call.
    pub candidate_count: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 0.0, max_new_tokens: 512, candidate_count: 1 }
    }
}

impl SamplingParams {
    /// Deterministic decoding, one completion.
    pub fn greedy() -> Self {
        SamplingParams::default()
    }

    /// Sampled decoding at the given temperature, one completion.
    pub fn sampled(temperature: f64) -> Self {
        SamplingParams { temperature, ..SamplingParams::default() }
    }

    pub fn with_candidates(mut self, candidate_count: usize) -> Self {
        self.candidate_count = candidate_count;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_new_tokens must be >= 1".into()));
        }
        if self.candidate_count == 0 {
            return Err(GatewayError::InvalidParams("candidate_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// A dense embedding. Stored and compared as f32; similarity accumulates in
/// f64 for stable ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    /// Scales the vector to unit length. Fails on zero vectors, which cannot
    /// carry similarity information.
    pub fn normalized(mut self) -> Result<Self, GatewayError> {
        let norm = self.l2_norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GatewayError::MalformedResponse(
                "embedding has zero or non-finite norm".into(),
            ));
        }
        for v in &mut self.values {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(self)
    }

    /// Dot product; equals cosine similarity for normalized vectors.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }
}
