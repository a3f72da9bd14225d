use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendRequest, BackendResponse, Completion, OracleError, TokenLogprob, TruthView};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "TASKLOOP_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Never read from config files; see [`EndpointConfig::with_env_token`].
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: f64,
    /// Extra attempts after the first on transient failures.
    pub retries: u32,
    /// Delay before the first retry; doubles after each.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: "gpt-4o".to_string(),
            api_key: None,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, OracleError> {
        toml::from_str(text).map_err(|e| OracleError::MalformedRequest(format!("endpoint config: {e}")))
    }

    pub fn with_env_token(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Client for a remote chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(Result<BackendResponse, OracleError>),
    Retry(OracleError),
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, OracleError> {
        if config.base_url.is_empty() {
            return Err(OracleError::MalformedRequest("endpoint base URL is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn body(&self, req: &BackendRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": req.messages,
            "n": req.n_candidates,
            "temperature": req.temperature,
            "logprobs": req.want_logprobs,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        })
    }

    fn attempt(&self, req: &BackendRequest) -> Attempt {
        let mut call = self.agent.post(self.config.url());
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(self.body(req)) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(OracleError::Network(e.to_string())),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Done(Err(OracleError::Auth(status))),
            408 | 429 | 500..=599 => return Attempt::Retry(OracleError::Network(format!("status {status}"))),
            _ => return Attempt::Done(Err(OracleError::MalformedResponse(format!("status {status}")))),
        }
        let value: Value = match resp.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Attempt::Done(Err(OracleError::MalformedResponse(e.to_string()))),
        };
        Attempt::Done(parse_wire(&value, req))
    }
}

/// Maps a chat-completions body into candidates.
pub(crate) fn parse_wire(value: &Value, req: &BackendRequest) -> Result<BackendResponse, OracleError> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| OracleError::MalformedResponse("no choices".into()))?;
    let mut candidates = Vec::new();
    for choice in choices.iter().take(req.n_candidates) {
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| OracleError::MalformedResponse("choice without content".into()))?
            .to_string();
        let mut tokens = Vec::new();
        if req.want_logprobs {
            let entries = choice
                .pointer("/logprobs/content")
                .and_then(Value::as_array)
                .ok_or(OracleError::MissingLogprobs)?;
            for e in entries {
                let token = e.get("token").and_then(Value::as_str);
                let logprob = e.get("logprob").and_then(Value::as_f64);
                match (token, logprob) {
                    (Some(t), Some(l)) => tokens.push(TokenLogprob {
                        token: t.to_string(),
                        logprob: l,
                    }),
                    _ => return Err(OracleError::MalformedResponse("bad logprob entry".into())),
                }
            }
        }
        candidates.push(Completion { text, tokens });
    }
    let resp = BackendResponse { candidates };
    resp.validate(req)?;
    Ok(resp)
}

impl Backend for HttpBackend {
    fn complete(&self, req: &BackendRequest, _view: &TruthView) -> Result<BackendResponse, OracleError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(req) {
                Attempt::Done(r) => return r,
                Attempt::Retry(e) if attempt >= self.config.retries => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("chat request failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
