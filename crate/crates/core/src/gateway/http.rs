//! OpenAI-compatible HTTP backend.
//!
//! Talks to `{base_url}/chat/completions` and `{base_url}/embeddings`. The
//! base URL comes from the `CORE_BASE_URL` environment variable (falling back
//! to the config file), the key from `CORE_API_KEY`. Yes-probabilities are
//! read from token logprobs when the server returns them.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::types::render_transcript;
use super::{
    Backend, BackendConfig, ChatTurn, GatewayError, SamplingParams, ENV_API_KEY, ENV_BASE_URL,
    SELF_EVAL_QUESTION,
};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    model: String,
    embed_model: String,
    request_logprobs: bool,
}

impl HttpBackend {
    /// Builds the backend from config plus environment. `CORE_BASE_URL`
    /// overrides the configured URL; a missing URL in both places is an
    /// error. The key is optional so local inference servers work.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let base_url = std::env::var(ENV_BASE_URL)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .or_else(|| config.base_url.clone())
            .ok_or_else(|| {
                GatewayError::InvalidParams(format!(
                    "no base URL: set {ENV_BASE_URL} or backend.base_url"
                ))
            })?;
        let api_key = std::env::var(ENV_API_KEY).ok().filter(|v| !v.trim().is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: config.model.clone(),
            embed_model: config.embed_model.clone(),
            request_logprobs: config.request_logprobs,
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|err| GatewayError::Transport {
            attempts: 1,
            detail: err.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|err| GatewayError::Transport { attempts: 1, detail: err.to_string() })?;
        if status >= 400 {
            return Err(GatewayError::Http {
                status,
                attempts: 1,
                detail: truncate(&text, 300),
            });
        }
        serde_json::from_str(&text)
            .map_err(|err| GatewayError::MalformedResponse(format!("invalid JSON body: {err}")))
    }

    fn chat_request(
        &self,
        turns: &[ChatTurn],
        params: &SamplingParams,
        logprobs: bool,
    ) -> Result<ChatResponse, GatewayError> {
        let messages: Vec<_> = turns
            .iter()
            .map(|t| json!({"role": t.role.as_str(), "content": t.content}))
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
            "n": params.candidate_count,
        });
        if logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(5);
        }
        let value = self.post("/chat/completions", &body)?;
        serde_json::from_value(value).map_err(|err| {
            GatewayError::MalformedResponse(format!("unexpected chat completion shape: {err}"))
        })
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> String {
        format!("http(model={}, url={})", self.model, self.base_url)
    }

    fn chat(
        &self,
        turns: &[ChatTurn],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let response = self.chat_request(turns, params, false)?;
        if response.choices.is_empty() {
            return Err(GatewayError::MalformedResponse("no choices in response".into()));
        }
        Ok(response
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    fn yes_probability(&self, turns: &[ChatTurn]) -> Result<Option<f64>, GatewayError> {
        if !self.request_logprobs {
            return Ok(None);
        }
        // Guard against being asked for logprobs on arbitrary prompts; the
        // yes-mass summation below only makes sense for the one-word verdict.
        if !render_transcript(turns).contains(SELF_EVAL_QUESTION) {
            return Ok(None);
        }
        let params = SamplingParams { temperature: 0.0, max_new_tokens: 4, candidate_count: 1 };
        let response = self.chat_request(turns, &params, true)?;
        let choice = match response.choices.into_iter().next() {
            Some(c) => c,
            None => return Ok(None),
        };
        let content = match choice.logprobs.and_then(|l| l.content) {
            Some(c) => c,
            None => return Ok(None),
        };
        let first = match content.first() {
            Some(t) => t,
            None => return Ok(None),
        };
        // Sum the probability mass of every listed alternative whose token
        // starts an affirmative reply; count the sampled token too when the
        // listing omits it (or is absent entirely).
        let mut yes_mass = 0.0f64;
        let mut saw_sampled = false;
        for alt in &first.top_logprobs {
            if alt.token == first.token {
                saw_sampled = true;
            }
            if is_yes_token(&alt.token) {
                yes_mass += alt.logprob.exp();
            }
        }
        if !saw_sampled && is_yes_token(&first.token) {
            yes_mass += first.logprob.exp();
        }
        Ok(Some(yes_mass.clamp(0.0, 1.0)))
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let body = json!({"model": self.embed_model, "input": text});
        let value = self.post("/embeddings", &body)?;
        let response: EmbeddingResponse = serde_json::from_value(value).map_err(|err| {
            GatewayError::MalformedResponse(format!("unexpected embedding shape: {err}"))
        })?;
        response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| GatewayError::MalformedResponse("no embedding in response".into()))
    }
}

fn is_yes_token(token: &str) -> bool {
    token.trim_start().to_lowercase().starts_with("yes")
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        text.to_string()
    } else {
        let mut end = limit;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &text[..end])
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TokenAlternative>,
}

#[derive(Debug, Deserialize)]
struct TokenAlternative {
    token: String,
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_token_prefix_match() {
        assert!(is_yes_token("Yes"));
        assert!(is_yes_token(" yes"));
        assert!(is_yes_token("YES."));
        assert!(!is_yes_token("No"));
        assert!(!is_yes_token("maybe yes"));
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let text = "ααααα";
        let cut = truncate(text, 3);
        assert!(cut.ends_with("..."));
        assert!(cut.starts_with('α'));
    }

    #[test]
    fn chat_response_parses_openai_shape() {
        let value = serde_json::json!({
            "id": "x",
            "choices": [
                {"index": 0, "message": {"role": "assistant", "content": "hello"},
                 "logprobs": {"content": [
                     {"token": "Yes", "logprob": -0.105,
                      "top_logprobs": [{"token": "Yes", "logprob": -0.105},
                                        {"token": "No", "logprob": -2.3}]}
                 ]},
                 "finish_reason": "stop"}
            ]
        });
        let parsed: ChatResponse = serde_json::from_value(value).unwrap();
        assert_eq!(parsed.choices.len(), 1);
        assert_eq!(parsed.choices[0].message.content.as_deref(), Some("hello"));
        let lp = parsed.choices[0].logprobs.as_ref().unwrap().content.as_ref().unwrap();
        assert_eq!(lp[0].top_logprobs.len(), 2);
    }
}
