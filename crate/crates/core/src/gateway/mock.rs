//! Deterministic offline backend.
//!
//! Every reply is a pure function of (prompt bytes, seed, candidate index),
//! hashed with SHA-256 so the bytes are identical across processes and Rust
//! versions. The mock recognizes the gateway's request markers in the prompt
//! text and answers in kind: sub-question proposals (with duplicates by
//! construction, so the consistency reward has signal), sub-question answers
//! (a function of the sub-question and seed only), self-evaluation votes with
//! a fixed per-question probability, and final answers in the SQL or
//! free-form shape the prompt asks for.

use sha2::{Digest, Sha256};

use super::types::render_transcript;
use super::{
    Backend, ChatTurn, GatewayError, SamplingParams, ANSWER_REQUEST_PREFIX, FINAL_ANSWER_MARKER,
    SELF_EVAL_QUESTION, SUBQUESTION_REQUEST, TERMINAL_MARKER,
};

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dimension: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed, dimension: 64 }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The fixed affirmation probability for a sub-question:
    /// (hash(q) mod 100) / 100. Deliberately independent of the seed so the
    /// value is a property of the question text alone.
    pub fn r2_probability(question: &str) -> f64 {
        (h64(&[b"self-eval", question.as_bytes()]) % 100) as f64 / 100.0
    }

    fn subquestion_candidates(&self, prompt: &str, d: usize) -> Vec<String> {
        // Map d draws onto d-1 distinct stems (minimum 1): the pigeonhole
        // principle guarantees at least one duplicated candidate whenever
        // d >= 2, which is what the consistency reward feeds on.
        let buckets = d.saturating_sub(1).max(1) as u64;
        let steps_taken = prompt.lines().filter(|l| l.starts_with("Step ")).count() as u64;
        (0..d)
            .map(|i| {
                let bucket =
                    h64(&[prompt.as_bytes(), &self.seed.to_be_bytes(), b"bucket", &(i as u64).to_be_bytes()])
                        % buckets;
                let stem = h64(&[
                    prompt.as_bytes(),
                    &self.seed.to_be_bytes(),
                    b"stem",
                    &bucket.to_be_bytes(),
                ]);
                let tag = stem & 0xff_ffff;
                // Deeper contexts are likelier to conclude: 0% at the root,
                // +30 percentage points per recorded step, capped at 95%.
                let conclude_threshold = (steps_taken * 30).min(95);
                let concludes = h64(&[
                    prompt.as_bytes(),
                    &self.seed.to_be_bytes(),
                    b"terminal",
                    &bucket.to_be_bytes(),
                ]) % 100
                    < conclude_threshold;
                if concludes {
                    format!("{TERMINAL_MARKER} combining the steps, what is the result for item {tag:06x}?")
                } else {
                    format!("What does item {tag:06x} contribute to part {}?", bucket + 1)
                }
            })
            .collect()
    }

    fn answer_for(&self, subquestion: &str) -> String {
        let h = h64(&[b"answer", subquestion.as_bytes(), &self.seed.to_be_bytes()]);
        if subquestion.contains(TERMINAL_MARKER) {
            format!("Combining the steps gives the result. {FINAL_ANSWER_MARKER} result-{h:08x}", h = h & 0xffff_ffff)
        } else {
            format!("The needed fact is finding-{h:08x}.", h = h & 0xffff_ffff)
        }
    }

    fn self_eval_votes(&self, prompt: &str, n: usize) -> Vec<String> {
        let p = Self::r2_probability(&extract_marked_line(prompt, "Sub-question: ").unwrap_or_else(|| prompt.to_string()));
        // Systematic (stratified) draws: vote i affirms iff (i + 0.5)/n < p,
        // so the sample frequency is always within 1/(2n) of p.
        (0..n)
            .map(|i| if ((i as f64) + 0.5) / (n as f64) < p { "Yes".to_string() } else { "No".to_string() })
            .collect()
    }

    fn final_sql(&self, prompt: &str, index: usize) -> String {
        let h = h64(&[prompt.as_bytes(), &self.seed.to_be_bytes(), b"sql", &(index as u64).to_be_bytes()])
            & 0xffff_ffff;
        format!(
            "Using the retrieved experience as a guide, the query follows.\n```sql\nSELECT value FROM results WHERE tag = 'v{h:08x}'\n```"
        )
    }

    fn final_freeform(&self, prompt: &str, index: usize) -> String {
        let h = h64(&[prompt.as_bytes(), &self.seed.to_be_bytes(), b"ans", &(index as u64).to_be_bytes()])
            & 0xffff_ffff;
        format!("Reading the table against the experience items.\nAnswer: value-{h:08x}")
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> String {
        format!("mock(seed={}, dim={})", self.seed, self.dimension)
    }

    fn chat(
        &self,
        turns: &[ChatTurn],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let prompt = render_transcript(turns);
        let n = params.candidate_count;
        if prompt.contains(SELF_EVAL_QUESTION) {
            return Ok(self.self_eval_votes(&prompt, n));
        }
        if prompt.contains(SUBQUESTION_REQUEST) {
            return Ok(self.subquestion_candidates(&prompt, n));
        }
        if let Some(sub) = extract_marked_line(&prompt, ANSWER_REQUEST_PREFIX) {
            return Ok(vec![self.answer_for(&sub); n]);
        }
        if prompt.contains("[NEW SQL]") {
            return Ok((0..n).map(|i| self.final_sql(&prompt, i)).collect());
        }
        if prompt.contains("[Answer]") {
            return Ok((0..n).map(|i| self.final_freeform(&prompt, i)).collect());
        }
        Ok((0..n)
            .map(|i| {
                let h = h64(&[prompt.as_bytes(), &self.seed.to_be_bytes(), b"generic", &(i as u64).to_be_bytes()])
                    & 0xffff_ffff;
                format!("reply-{h:08x}")
            })
            .collect())
    }

    fn yes_probability(&self, turns: &[ChatTurn]) -> Result<Option<f64>, GatewayError> {
        let prompt = render_transcript(turns);
        if prompt.contains(SELF_EVAL_QUESTION) {
            let q = extract_marked_line(&prompt, "Sub-question: ").unwrap_or(prompt);
            return Ok(Some(Self::r2_probability(&q)));
        }
        Ok(None)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let mut values = Vec::with_capacity(self.dimension);
        let mut block: u64 = 0;
        while values.len() < self.dimension {
            let mut hasher = Sha256::new();
            hasher.update(self.seed.to_be_bytes());
            hasher.update(block.to_be_bytes());
            hasher.update(text.as_bytes());
            let bytes = hasher.finalize();
            for chunk in bytes.chunks_exact(4) {
                if values.len() == self.dimension {
                    break;
                }
                let u = u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                values.push(((u as f64 / u32::MAX as f64) * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        Ok(values)
    }
}

/// First 8 bytes of SHA-256 over length-prefixed parts, as a big-endian u64.
fn h64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 yields at least 8 bytes"))
}

/// Content of the first line starting with `marker`, after the marker.
fn extract_marked_line(prompt: &str, marker: &str) -> Option<String> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(marker))
        .map(|rest| rest.trim().to_string())
}
