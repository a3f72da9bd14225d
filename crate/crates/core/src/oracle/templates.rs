use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Message, OracleError, Role};

/// Prefix of the routing line each template starts with.
pub const MARKER_PREFIX: &str = "#taskloop:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    RelOnIn,
    OpenedCheck,
    HoldingCheck,
    ExtractObjects,
    SelectPredicates,
    GenerateGoal,
    PlannerSystem,
    PlannerEnv,
    PlannerObs,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 9] = [
        Self::RelOnIn,
        Self::OpenedCheck,
        Self::HoldingCheck,
        Self::ExtractObjects,
        Self::SelectPredicates,
        Self::GenerateGoal,
        Self::PlannerSystem,
        Self::PlannerEnv,
        Self::PlannerObs,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::RelOnIn => "rel_on_in",
            Self::OpenedCheck => "opened_check",
            Self::HoldingCheck => "holding_check",
            Self::ExtractObjects => "extract_objects",
            Self::SelectPredicates => "select_predicates",
            Self::GenerateGoal => "generate_goal",
            Self::PlannerSystem => "planner_system",
            Self::PlannerEnv => "planner_env",
            Self::PlannerObs => "planner_obs",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            Self::RelOnIn => include_str!("../../assets/prompts/rel_on_in.txt"),
            Self::OpenedCheck => include_str!("../../assets/prompts/opened_check.txt"),
            Self::HoldingCheck => include_str!("../../assets/prompts/holding_check.txt"),
            Self::ExtractObjects => include_str!("../../assets/prompts/extract_objects.txt"),
            Self::SelectPredicates => include_str!("../../assets/prompts/select_predicates.txt"),
            Self::GenerateGoal => include_str!("../../assets/prompts/generate_goal.txt"),
            Self::PlannerSystem => include_str!("../../assets/prompts/planner_system.txt"),
            Self::PlannerEnv => include_str!("../../assets/prompts/planner_env.txt"),
            Self::PlannerObs => include_str!("../../assets/prompts/planner_obs.txt"),
        }
    }

    pub fn marker(self) -> String {
        format!("{MARKER_PREFIX}{}", self.id())
    }

    /// Slot names in order of first appearance.
    pub fn slots(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for (_, name) in slot_spans(self.body()) {
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Finds the template whose marker appears in `text`.
    pub fn detect(text: &str) -> Option<Self> {
        text.lines().find_map(|line| {
            let rest = line.trim().strip_prefix(MARKER_PREFIX)?;
            let id = rest.split_whitespace().next()?;
            id.parse().ok()
        })
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PromptTemplate {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, OracleError> {
        Self::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| OracleError::UnknownTemplate(s.to_string()))
    }
}

/// `[NAME]` placeholders: uppercase letters, digits and `_`.
fn slot_spans(body: &str) -> Vec<(std::ops::Range<usize>, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b']' && bytes[start].is_ascii_uppercase() {
                out.push((i..j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every slot. Slot values are inserted as-is.
pub fn render_prompt(id: PromptTemplate, slots: &BTreeMap<String, String>) -> Result<String, OracleError> {
    let body = id.body();
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for (range, name) in slot_spans(body) {
        let value = slots
            .get(name)
            .ok_or_else(|| OracleError::MissingSlot(id.id().to_string(), name.to_string()))?;
        out.push_str(&body[last..range.start]);
        out.push_str(value);
        last = range.end;
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// Renders by template id string, for callers holding names.
pub fn render_named(id: &str, slots: &BTreeMap<String, String>) -> Result<String, OracleError> {
    render_prompt(id.parse()?, slots)
}

/// Splits a rendered prompt into chat turns. Text opening with a `[user]`
/// line is a scripted exchange; anything else is a single user turn.
pub fn to_messages(rendered: &str) -> Vec<Message> {
    if !rendered.starts_with("[user]\n") {
        return vec![Message::user(rendered.trim_end())];
    }
    let mut out: Vec<Message> = Vec::new();
    let mut role = Role::User;
    let mut buf: Vec<&str> = Vec::new();
    let flush = |out: &mut Vec<Message>, role: Role, buf: &mut Vec<&str>| {
        let text = buf.join("\n").trim().to_string();
        if !text.is_empty() {
            out.push(Message { role, content: text });
        }
        buf.clear();
    };
    for line in rendered.lines() {
        match line.trim_end() {
            "[user]" => {
                flush(&mut out, role, &mut buf);
                role = Role::User;
            }
            "[assistant]" => {
                flush(&mut out, role, &mut buf);
                role = Role::Assistant;
            }
            _ => buf.push(line),
        }
    }
    flush(&mut out, role, &mut buf);
    out
}

pub fn slot_map<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
