//! Pluggable interface to the generative model and the embedding model.
//!
//! Two backends implement [`Backend`]: an HTTP client speaking the
//! chat-completions wire protocol ([`HttpBackend`]) and a deterministic
//! [`MockBackend`] for offline tests. [`Gateway`] wraps a backend with the
//! prompt construction, retry, answer extraction, and parallelism bounds the
//! rest of the pipeline relies on.

mod extract;
mod http;
mod mock;
mod types;

pub use extract::{extract_answer, AnswerFormat};
pub use http::HttpBackend;
pub use mock::MockBackend;
pub use types::{
    render_transcript, validate_transcript, ChatTurn, EmbeddingVector, Role, SamplingParams,
};

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the HTTP backend's bearer token.
pub const ENV_API_KEY: &str = "CORE_API_KEY";
/// Environment variable overriding the HTTP backend's base URL.
pub const ENV_BASE_URL: &str = "CORE_BASE_URL";

/// Sub-questions that begin with this marker signal that the next answer
/// concludes the reasoning; the decomposition instructions ask the generator
/// to emit it, and the mock backend honors the same convention.
pub const TERMINAL_MARKER: &str = "Now we can answer the question:";

/// Answers carrying this marker terminate a trajectory; the text after it is
/// the trajectory's final answer.
pub const FINAL_ANSWER_MARKER: &str = "Final answer:";

/// Trailing request line of sub-question generation prompts.
pub const SUBQUESTION_REQUEST: &str = "Propose the next sub-question.";

/// Prefix of the line naming the sub-question in answering prompts.
pub const ANSWER_REQUEST_PREFIX: &str = "Sub-question to answer: ";

/// The self-evaluation question put to the generator verbatim.
pub const SELF_EVAL_QUESTION: &str = "Is this reasoning step correct?";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("invalid chat transcript: {0}")]
    InvalidTranscript(String),
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("backend returned HTTP {status} after {attempts} attempt(s): {detail}")]
    Http { status: u16, attempts: usize, detail: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend produced an empty completion")]
    EmptyCompletion,
    #[error("no extractable answer in completion: {raw:?}")]
    AnswerExtraction { raw: String },
    #[error("backend does not support {0}")]
    Unsupported(String),
}

impl GatewayError {
    fn with_attempts(self, n: usize) -> GatewayError {
        match self {
            GatewayError::Transport { detail, .. } => {
                GatewayError::Transport { attempts: n, detail }
            }
            GatewayError::Http { status, detail, .. } => {
                GatewayError::Http { status, attempts: n, detail }
            }
            other => other,
        }
    }

    /// Transient failures worth retrying: transport errors, rate limits, and
    /// server-side errors. Other HTTP statuses are permanent.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport { .. } => true,
            GatewayError::Http { status, .. } => *status == 429 || (500..=599).contains(status),
            _ => false,
        }
    }
}

/// A generative-model backend. Implementations must be safe for concurrent
/// in-flight requests; the [`Gateway`] enforces the parallelism bound.
pub trait Backend: Send + Sync {
    /// Stable human-readable identity for run manifests,
    /// e.g. `mock(seed=7)` or `http(model=gpt-4, base=...)`.
    fn descriptor(&self) -> String;

    /// Returns `params.candidate_count` completions for the transcript.
    fn chat(&self, turns: &[ChatTurn], params: &SamplingParams)
        -> Result<Vec<String>, GatewayError>;

    /// Probability mass of an affirmative first token, when the backend can
    /// expose token log-probabilities; `None` signals no support.
    fn yes_probability(&self, turns: &[ChatTurn]) -> Result<Option<f64>, GatewayError>;

    /// Raw (unnormalized) embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError>;
}

/// Which backend to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

/// How [`Gateway::self_evaluate`] obtains the affirmation probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfEvalMode {
    /// Token log-probabilities when available, else sample frequency.
    #[default]
    Auto,
    /// Log-probabilities only; error if the backend lacks them.
    LogprobOnly,
    /// Sample frequency only.
    SamplingOnly,
}

/// Declarative backend settings, typically the `[backend]` config section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Chat-completions base URL; `CORE_BASE_URL` overrides, HTTP only.
    pub base_url: Option<String>,
    pub model: String,
    pub embed_model: String,
    /// Mock determinism seed.
    pub seed: u64,
    /// Mock embedding dimension.
    pub mock_dimension: usize,
    /// Maximum simultaneous backend calls.
    pub parallelism: usize,
    /// Ask the HTTP backend for token log-probabilities on self-evaluation.
    pub request_logprobs: bool,
    pub timeout_secs: u64,
    pub self_eval: SelfEvalMode,
    /// Sample count m for the self-evaluation sampling path.
    pub eval_samples: usize,
    pub retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model: "gpt-4".into(),
            embed_model: "bge-large-en-v1.5".into(),
            seed: 0,
            mock_dimension: 64,
            parallelism: 8,
            request_logprobs: true,
            timeout_secs: 120,
            self_eval: SelfEvalMode::Auto,
            eval_samples: 8,
            retries: 3,
            initial_backoff_ms: 1000,
        }
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter { permits: Mutex::new(permits.max(1)), available: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.limiter.permits.lock().unwrap();
        *permits += 1;
        self.limiter.available.notify_one();
    }
}

/// A raw completion together with the answer extracted from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalAnswer {
    pub raw: String,
    pub extracted: String,
}

/// The pipeline's door to the generative model: prompt construction, retry,
/// self-evaluation, answer extraction, and embedding normalization.
pub struct Gateway {
    backend: Box<dyn Backend>,
    limiter: Limiter,
    self_eval: SelfEvalMode,
    eval_samples: usize,
    retries: u32,
    initial_backoff: Duration,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Gateway::with_options(backend, &BackendConfig::default())
    }

    pub fn with_options(backend: Box<dyn Backend>, config: &BackendConfig) -> Self {
        Gateway {
            backend,
            limiter: Limiter::new(config.parallelism),
            self_eval: config.self_eval,
            eval_samples: config.eval_samples.max(1),
            retries: config.retries,
            initial_backoff: Duration::from_millis(config.initial_backoff_ms),
        }
    }

    /// Builds the configured backend. The mock needs no environment; the HTTP
    /// backend reads `CORE_BASE_URL` / `CORE_API_KEY` overrides here.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::Mock => {
                Box::new(MockBackend::new(config.seed).with_dimension(config.mock_dimension))
            }
            BackendKind::Http => Box::new(HttpBackend::from_config(config)?),
        };
        Ok(Gateway::with_options(backend, config))
    }

    pub fn descriptor(&self) -> String {
        self.backend.descriptor()
    }

    fn call_with_retry<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let _permit = self.limiter.acquire();
        let mut attempt: usize = 1;
        let mut backoff = self.initial_backoff;
        loop {
            match call() {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt <= self.retries as usize => {
                    log::warn!("backend attempt {attempt} failed, retrying: {err}");
                    std::thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                    attempt += 1;
                }
                Err(err) => return Err(err.with_attempts(attempt)),
            }
        }
    }

    /// Raw chat access: all completions for a validated transcript.
    pub fn complete(
        &self,
        turns: &[ChatTurn],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        params.validate()?;
        validate_transcript(turns)?;
        self.call_with_retry(|| self.backend.chat(turns, params))
    }

    /// Samples up to `d` candidate next sub-questions for the reasoning
    /// context. Duplicates are expected and meaningful: the consistency
    /// reward counts them. Candidates are collapsed to single lines.
    pub fn generate_subquestions(
        &self,
        context: &[ChatTurn],
        evidence: &str,
        d: usize,
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        if d == 0 {
            return Err(GatewayError::InvalidParams("d must be >= 1".into()));
        }
        let turns = Self::splice_into_last_user_turn(
            context,
            &format!("[Evidence]\n{evidence}\n\n{SUBQUESTION_REQUEST}"),
        )?;
        let request = params.clone().with_candidates(d);
        let completions = self.complete(&turns, &request)?;
        let candidates: Vec<String> = completions
            .iter()
            .map(|c| single_line(c))
            .filter(|c| !c.is_empty())
            .collect();
        if candidates.is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(candidates)
    }

    /// Answers one sub-question in context, forming the next reasoning state.
    pub fn answer_subquestion(
        &self,
        context: &[ChatTurn],
        subquestion: &str,
        params: &SamplingParams,
    ) -> Result<String, GatewayError> {
        if subquestion.trim().is_empty() {
            return Err(GatewayError::InvalidParams("subquestion must be non-empty".into()));
        }
        let sub = single_line(subquestion);
        let turns = Self::splice_into_last_user_turn(
            context,
            &format!("{ANSWER_REQUEST_PREFIX}{sub}\nAnswer it directly."),
        )?;
        let request = params.clone().with_candidates(1);
        let completions = self.complete(&turns, &request)?;
        let answer = completions.first().map(|s| s.trim().to_string()).unwrap_or_default();
        if answer.is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(answer)
    }

    /// Probability that the generator affirms the reasoning step, in [0, 1].
    /// Prefers token log-probabilities; falls back to the frequency of "Yes"
    /// over `eval_samples` temperature-1 samples.
    pub fn self_evaluate(&self, question: &str, answer: &str) -> Result<f64, GatewayError> {
        if question.trim().is_empty() || answer.trim().is_empty() {
            return Err(GatewayError::InvalidParams(
                "self-evaluation needs a non-empty question and answer".into(),
            ));
        }
        let turns = [
            ChatTurn::system("You check intermediate reasoning steps for structured-data questions."),
            ChatTurn::user(format!(
                "Sub-question: {}\nProposed answer: {}\n{SELF_EVAL_QUESTION} Reply Yes or No.",
                single_line(question),
                single_line(answer),
            )),
        ];
        if self.self_eval != SelfEvalMode::SamplingOnly {
            if let Some(p) = self.call_with_retry(|| self.backend.yes_probability(&turns))? {
                return Ok(p.clamp(0.0, 1.0));
            }
            if self.self_eval == SelfEvalMode::LogprobOnly {
                return Err(GatewayError::Unsupported(
                    "token log-probabilities (required by self_eval = logprob_only)".into(),
                ));
            }
        }
        let params = SamplingParams {
            temperature: 1.0,
            max_new_tokens: 4,
            candidate_count: self.eval_samples,
        };
        let samples = self.complete(&turns, &params)?;
        if samples.is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        let yes = samples.iter().filter(|s| is_affirmative(s)).count();
        Ok(yes as f64 / samples.len() as f64)
    }

    /// One completion for a fully rendered prompt, plus the answer extracted
    /// per `format` (fenced SQL block or `Answer:` line).
    pub fn generate_final_answer(
        &self,
        turns: &[ChatTurn],
        format: AnswerFormat,
        params: &SamplingParams,
    ) -> Result<FinalAnswer, GatewayError> {
        let request = params.clone().with_candidates(1);
        let completions = self.complete(turns, &request)?;
        let raw = completions.first().cloned().unwrap_or_default();
        if raw.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        let extracted = extract_answer(&raw, format)?;
        Ok(FinalAnswer { raw, extracted })
    }

    /// L2-normalized embedding of `text`.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.is_empty() {
            return Err(GatewayError::InvalidParams("cannot embed empty text".into()));
        }
        let values = self.call_with_retry(|| self.backend.embed(text))?;
        EmbeddingVector::new(values).normalized()
    }

    /// Appends `addition` to the final user turn, keeping role alternation
    /// intact. The context must end with a user turn.
    fn splice_into_last_user_turn(
        context: &[ChatTurn],
        addition: &str,
    ) -> Result<Vec<ChatTurn>, GatewayError> {
        validate_transcript(context)?;
        let mut turns = context.to_vec();
        match turns.last_mut() {
            Some(last) if last.role == Role::User => {
                last.content = format!("{}\n\n{addition}", last.content);
                Ok(turns)
            }
            _ => Err(GatewayError::InvalidTranscript(
                "context must end with a user turn".into(),
            )),
        }
    }
}

/// First word starts with "yes", case-insensitively ("Yes," / "yes." count).
fn is_affirmative(completion: &str) -> bool {
    completion
        .split_whitespace()
        .next()
        .map(|w| w.to_lowercase().starts_with("yes"))
        .unwrap_or(false)
}

/// Collapses all whitespace runs (including newlines) to single spaces.
fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
