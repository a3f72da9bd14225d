//! Language-model boundary: prompt templates, completion backends and
//! promptable-predicate queries.

mod http;
mod mock;
mod policy;
mod scripted;
mod templates;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{GroundAtom, State};
use crate::worldsim::{ground_truth_atoms, normalize_name, WorldState};

pub use http::{EndpointConfig, HttpBackend, API_KEY_ENV};
pub use mock::{MockReply, MockServer};
pub use policy::{rank_actions, relaxed_domain, strip_feasibility, FEASIBILITY_PREDICATES};
pub use scripted::{tokenize, ScriptedBackend};
pub use templates::{render_named, render_prompt, slot_map, to_messages, PromptTemplate, MARKER_PREFIX};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("template `{0}` is missing slot `{1}`")]
    MissingSlot(String, String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("request carries no recognizable template marker")]
    UnrecognizedRequest,
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned no token logprobs")]
    MissingLogprobs,
    #[error("cannot parse reply `{0}`")]
    PromptableParse(String),
    #[error("`{0}` is not a promptable predicate")]
    NotPromptable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub messages: Vec<Message>,
    pub n_candidates: usize,
    pub temperature: f64,
    pub want_logprobs: bool,
    pub max_tokens: usize,
    /// Sampling seed; the scripted backend derives all its randomness from it.
    pub seed: u64,
}

impl BackendRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self {
            messages,
            n_candidates: 1,
            temperature: 0.0,
            want_logprobs: false,
            max_tokens: 256,
            seed: 0,
        }
    }

    pub fn with_candidates(mut self, n: usize) -> Self {
        self.n_candidates = n;
        self
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_logprobs = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Empty when logprobs were not requested.
    pub tokens: Vec<TokenLogprob>,
}

impl Completion {
    pub fn logprob_sum(&self) -> f64 {
        self.tokens.iter().map(|t| t.logprob).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub candidates: Vec<Completion>,
}

impl BackendResponse {
    pub fn first_text(&self) -> Option<&str> {
        self.candidates.first().map(|c| c.text.as_str())
    }

    /// Checks the shape promised to callers: no more than requested, token
    /// texts spell the candidate, and every logprob is at most zero.
    pub fn validate(&self, req: &BackendRequest) -> Result<(), OracleError> {
        if self.candidates.len() > req.n_candidates {
            return Err(OracleError::MalformedResponse(format!(
                "{} candidates for n = {}",
                self.candidates.len(),
                req.n_candidates
            )));
        }
        for c in &self.candidates {
            if !req.want_logprobs && c.tokens.is_empty() {
                continue;
            }
            if c.tokens.is_empty() && !c.text.is_empty() {
                return Err(OracleError::MissingLogprobs);
            }
            let joined: String = c.tokens.iter().map(|t| t.token.as_str()).collect();
            if joined != c.text {
                return Err(OracleError::MalformedResponse("tokens do not spell the candidate".into()));
            }
            if c.tokens.iter().any(|t| t.logprob.is_nan() || t.logprob > 0.0) {
                return Err(OracleError::MalformedResponse("positive or NaN logprob".into()));
            }
        }
        Ok(())
    }
}

/// What the model would see in the camera image: promptable truths and
/// the names of everything in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthView {
    pub atoms: State,
    pub objects: Vec<ObjectLabel>,
    /// Goal the scene was authored with, in PDDL.
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub id: String,
    pub label: String,
    pub aliases: Vec<String>,
    pub movable: bool,
    pub container: bool,
}

impl TruthView {
    pub fn of(s: &WorldState, goal: &str) -> Self {
        let ids = s.object_ids();
        let atoms = ground_truth_atoms(s, &ids).expect("ids come from the state");
        let objects = s
            .objects
            .values()
            .map(|o| ObjectLabel {
                id: o.id.clone(),
                label: o.label.clone(),
                aliases: o.aliases.clone(),
                movable: o.movable,
                container: o.container,
            })
            .collect();
        Self {
            atoms,
            objects,
            goal: goal.to_string(),
        }
    }

    /// A view with no objects, for backends that ignore it.
    pub fn empty() -> Self {
        Self {
            atoms: State::new(),
            objects: Vec::new(),
            goal: String::new(),
        }
    }

    /// Object id for a spoken or written name.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        let n = normalize_name(name);
        self.objects
            .iter()
            .find(|o| {
                normalize_name(&o.id) == n
                    || normalize_name(&o.label) == n
                    || o.aliases.iter().any(|a| normalize_name(a) == n)
            })
            .map(|o| o.id.as_str())
    }
}

/// A completion service. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &BackendRequest, view: &TruthView) -> Result<BackendResponse, OracleError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, req: &BackendRequest, view: &TruthView) -> Result<BackendResponse, OracleError> {
        (**self).complete(req, view)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, req: &BackendRequest, view: &TruthView) -> Result<BackendResponse, OracleError> {
        (**self).complete(req, view)
    }
}

/// Extra routing line naming the predicate asked about in an `on`/`in` query.
pub(crate) fn query_line(pred: &str) -> String {
    format!("{MARKER_PREFIX}query {pred}")
}

pub(crate) fn find_query(text: &str) -> Option<&str> {
    let prefix = format!("{MARKER_PREFIX}query ");
    text.lines()
        .find_map(|l| l.trim().strip_prefix(prefix.as_str()).map(str::trim))
}

/// Spoken form of an identifier.
pub fn spoken(id: &str) -> String {
    id.replace('_', " ")
}

/// Strict `True` / `False` reader; surrounding whitespace is ignored.
pub fn parse_truth(reply: &str) -> Result<bool, OracleError> {
    match reply.trim() {
        "True" => Ok(true),
        "False" => Ok(false),
        other => Err(OracleError::PromptableParse(other.to_string())),
    }
}

/// Strict `on` / `in` reader.
pub fn parse_relation(reply: &str) -> Result<&'static str, OracleError> {
    match reply.trim() {
        "on" => Ok("on"),
        "in" => Ok("in"),
        other => Err(OracleError::PromptableParse(other.to_string())),
    }
}

/// Asks the backend whether a promptable atom holds.
pub fn eval_promptable(
    atom: &GroundAtom,
    instruction: &str,
    view: &TruthView,
    backend: &dyn Backend,
    seed: u64,
) -> Result<bool, OracleError> {
    let arg = |i: usize| {
        atom.args
            .get(i)
            .map(|a| spoken(a))
            .ok_or_else(|| OracleError::MalformedRequest(format!("{atom} has too few arguments")))
    };
    let (template, slots) = match atom.predicate.as_str() {
        "on" | "in" => (
            PromptTemplate::RelOnIn,
            slot_map([
                ("OBJECT1", arg(0)?),
                ("OBJECT2", arg(1)?),
                ("INSTRUCTION", instruction.to_string()),
            ]),
        ),
        "opened" => (PromptTemplate::OpenedCheck, slot_map([("OBJECT", arg(0)?)])),
        "holding" => (PromptTemplate::HoldingCheck, slot_map([("OBJECT", arg(0)?)])),
        other => return Err(OracleError::NotPromptable(other.to_string())),
    };
    let mut text = render_prompt(template, &slots)?;
    if template == PromptTemplate::RelOnIn {
        text.push('\n');
        text.push_str(&query_line(&atom.predicate));
    }
    let req = BackendRequest::new(vec![Message::user(text)])
        .with_seed(seed)
        .with_temperature(0.0);
    let resp = backend.complete(&req, view)?;
    let reply = resp.first_text().ok_or_else(|| OracleError::PromptableParse(String::new()))?;
    if template == PromptTemplate::RelOnIn {
        Ok(parse_relation(reply)? == atom.predicate)
    } else {
        parse_truth(reply)
    }
}

/// Mixes a base seed with labels into a request seed.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    // final avalanche so nearby bases decorrelate
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Distinct names in a comma- or whitespace-separated list.
pub(crate) fn split_names(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.split(|c: char| c == ',' || c.is_whitespace())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_string()))
        .map(str::to_string)
        .collect()
}
