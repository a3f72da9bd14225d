use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::rank_actions;
use super::{
    find_query, split_names, Backend, BackendRequest, BackendResponse, Completion, OracleError, PromptTemplate,
    TokenLogprob, TruthView,
};
use crate::pddl::{parse_domain, parse_ground_action, parse_problem, GroundAtom};
use crate::worldsim::normalize_name;

/// Logprob gap between consecutive candidate ranks.
const RANK_STEP: f64 = 0.5;

/// Deterministic stand-in for a chat model. Promptable questions are
/// answered from the truth view with each answer flipped at rate
/// `epsilon`; planning requests are answered by the built-in policy.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub epsilon: f64,
}

impl ScriptedBackend {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon }
    }
}

/// Splits text into word and punctuation pieces that concatenate back to
/// it. A single leading space stays attached to the following word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        let word = ch.is_ascii_alphanumeric();
        let cur_is_word = cur.chars().last().is_some_and(|c| c.is_ascii_alphanumeric());
        if word && (cur_is_word || cur == " ") {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(ch);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn completion(text: String, total: f64, want_logprobs: bool) -> Completion {
    let tokens = if want_logprobs {
        let pieces = tokenize(&text);
        let each = if pieces.is_empty() { 0.0 } else { total / pieces.len() as f64 };
        pieces
            .into_iter()
            .map(|token| TokenLogprob { token, logprob: each })
            .collect()
    } else {
        Vec::new()
    };
    Completion { text, tokens }
}

/// Text between the first pair of `"""` fences after `anchor`.
fn fenced_after<'a>(text: &'a str, anchor: &str) -> Option<&'a str> {
    let start = text.find(anchor)? + anchor.len();
    let rest = &text[start..];
    let open = rest.find("\"\"\"")? + 3;
    let body = &rest[open..];
    let close = body.find("\"\"\"")?;
    Some(body[..close].trim())
}

fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

/// Object named in the sentence that starts right after `prefix`.
fn object_slot<'a>(text: &'a str, prefix: &str, suffix: &str) -> Option<&'a str> {
    let start = text.find(prefix)? + prefix.len();
    let rest = &text[start..];
    let end = rest.find(suffix)?;
    Some(rest[..end].trim())
}

/// Order in which samples would arrive: repeated draws without
/// replacement, each weighted by `exp(logprob / temperature)`. Zero
/// temperature keeps rank order.
fn sample_order(totals: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut left: Vec<usize> = (0..totals.len()).collect();
    let mut out = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let roll: f64 = rng.gen();
        let pick = if temperature <= 0.0 {
            0
        } else {
            let weights: Vec<f64> = left.iter().map(|&i| (totals[i] / temperature).exp()).collect();
            let mut r = roll * weights.iter().sum::<f64>();
            weights
                .iter()
                .position(|w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(left.len() - 1)
        };
        out.push(left.remove(pick));
    }
    out
}

impl ScriptedBackend {
    fn flip(&self, rng: &mut ChaCha8Rng) -> bool {
        // one draw per answer keeps the stream aligned across epsilons
        let roll: f64 = rng.gen();
        roll < self.epsilon
    }

    fn truth_reply(&self, holds: bool, rng: &mut ChaCha8Rng) -> String {
        let believed = holds != self.flip(rng);
        if believed { "True" } else { "False" }.to_string()
    }

    fn relation_reply(&self, text: &str, view: &TruthView, rng: &mut ChaCha8Rng) -> Result<String, OracleError> {
        let a = object_slot(text, "spatial relationship between ", " and ")
            .ok_or_else(|| OracleError::MalformedRequest("no first object".into()))?;
        let b = object_slot(text, &format!("between {a} and "), " based on")
            .ok_or_else(|| OracleError::MalformedRequest("no second object".into()))?;
        let query = find_query(text).unwrap_or("on");
        let other = if query == "on" { "in" } else { "on" };
        let holds = match (view.resolve(a), view.resolve(b)) {
            (Some(x), Some(y)) => view.atoms.contains(&GroundAtom::new(query, [x, y])),
            _ => false,
        };
        let believed = holds != self.flip(rng);
        Ok(if believed { query } else { other }.to_string())
    }

    fn extraction_reply(&self, text: &str, view: &TruthView) -> Result<String, OracleError> {
        let instruction = line_value(text, "The instruction:")
            .ok_or_else(|| OracleError::MalformedRequest("no instruction".into()))?;
        let words: Vec<String> = normalize_name(instruction)
            .split(' ')
            .map(|w| w.trim_matches(|c: char| !c.is_ascii_alphanumeric()).to_string())
            .collect();
        // earliest mention of each object by label or alias
        let mut mentions: Vec<(usize, &str)> = Vec::new();
        for o in &view.objects {
            let names = std::iter::once(&o.label).chain(o.aliases.iter());
            let first = names
                .filter_map(|n| {
                    let n: Vec<String> = normalize_name(n).split(' ').map(str::to_string).collect();
                    (0..words.len().saturating_sub(n.len() - 1)).find(|&i| words[i..i + n.len()] == n[..])
                })
                .min();
            if let Some(pos) = first {
                mentions.push((pos, o.id.as_str()));
            }
        }
        mentions.sort();
        let ordered: Vec<&str> = mentions.iter().map(|m| m.1).collect();
        let movable = |id: &str| view.objects.iter().any(|o| o.id == id && o.movable);
        let object = ordered
            .iter()
            .copied()
            .find(|id| movable(id))
            .or_else(|| ordered.first().copied())
            .ok_or_else(|| OracleError::MalformedRequest("instruction names no known object".into()))?;
        let support = view
            .atoms
            .iter()
            .find(|a| matches!(a.predicate.as_str(), "on" | "in") && a.args[0] == object)
            .map(|a| a.args[1].as_str());
        let related = support
            .filter(|s| ordered.contains(s))
            .or_else(|| ordered.iter().copied().find(|id| *id != object))
            .unwrap_or("");
        let others: Vec<&str> = ordered
            .iter()
            .copied()
            .filter(|id| *id != object && *id != related)
            .collect();
        let reply = serde_json::json!({
            "object_name": object,
            "related_object_name": related,
            "other_object_names": others,
        });
        Ok(serde_json::to_string_pretty(&reply).expect("json value"))
    }

    fn selection_reply(&self, text: &str, view: &TruthView) -> Result<String, OracleError> {
        let objects = split_names(
            line_value(text, "The possible ?obj could be:")
                .ok_or_else(|| OracleError::MalformedRequest("no object list".into()))?,
        );
        let preds_block = fenced_after(text, "The predicate candidates are:")
            .ok_or_else(|| OracleError::MalformedRequest("no predicate list".into()))?;
        let mut lines = Vec::new();
        for line in preds_block.lines() {
            let line = line.trim();
            let Some(inner) = line.strip_prefix('(') else { continue };
            let inner = inner.split(')').next().unwrap_or("");
            let mut parts = inner.split_whitespace();
            let Some(name) = parts.next() else { continue };
            let arity = parts.filter(|p| p.starts_with('?')).count();
            match arity {
                1 => {
                    for o in &objects {
                        // only containers open
                        if name == "opened" && !view.objects.iter().any(|x| &x.id == o && x.container) {
                            continue;
                        }
                        lines.push(format!("({name} {o})"));
                    }
                }
                2 => {
                    for a in &objects {
                        for b in &objects {
                            if a != b {
                                lines.push(format!("({name} {a} {b})"));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(lines.join("\n"))
    }

    fn planner_reply(&self, req: &BackendRequest, rng: &mut ChaCha8Rng) -> Result<BackendResponse, OracleError> {
        let env = req
            .messages
            .iter()
            .find(|m| PromptTemplate::detect(&m.content) == Some(PromptTemplate::PlannerEnv))
            .ok_or_else(|| OracleError::MalformedRequest("planner request without environment".into()))?;
        let obs = req.messages.last().expect("classified request has messages");
        let domain_text = fenced_after(&env.content, "Here's the domain description you used:")
            .ok_or_else(|| OracleError::MalformedRequest("no domain".into()))?;
        let problem_text = fenced_after(&obs.content, "The observation of the current environment is as follows:")
            .ok_or_else(|| OracleError::MalformedRequest("no observation".into()))?;
        let domain = parse_domain(domain_text).map_err(|e| OracleError::MalformedRequest(e.to_string()))?;
        let problem =
            parse_problem(problem_text, &domain).map_err(|e| OracleError::MalformedRequest(e.to_string()))?;
        let last = fenced_after(&obs.content, "The action executed last time is as follows:").and_then(parse_ground_action);
        let ranked = rank_actions(&domain, &problem, last.as_ref(), req.n_candidates);
        let totals: Vec<f64> = (0..ranked.len()).map(|rank| -RANK_STEP * rank as f64).collect();
        let candidates = sample_order(&totals, req.temperature, rng)
            .into_iter()
            .map(|i| completion(ranked[i].to_string(), totals[i], req.want_logprobs))
            .collect();
        Ok(BackendResponse { candidates })
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &BackendRequest, view: &TruthView) -> Result<BackendResponse, OracleError> {
        let last = req.messages.last().ok_or(OracleError::UnrecognizedRequest)?;
        let template = PromptTemplate::detect(&last.content).ok_or(OracleError::UnrecognizedRequest)?;
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let text = last.content.as_str();
        let single = |s: String| BackendResponse {
            candidates: vec![completion(s, 0.0, req.want_logprobs)],
        };
        let subject = || {
            object_slot(text, "holding the ", " in the image")
                .or_else(|| object_slot(text, "check if ", " is opened"))
                .ok_or_else(|| OracleError::MalformedRequest("no object".into()))
        };
        Ok(match template {
            PromptTemplate::RelOnIn => single(self.relation_reply(text, view, &mut rng)?),
            PromptTemplate::OpenedCheck => {
                let holds = view
                    .resolve(subject()?)
                    .is_some_and(|id| view.atoms.contains(&GroundAtom::new("opened", [id])));
                single(self.truth_reply(holds, &mut rng))
            }
            PromptTemplate::HoldingCheck => {
                let holds = view
                    .resolve(subject()?)
                    .is_some_and(|id| view.atoms.contains(&GroundAtom::new("holding", [id])));
                single(self.truth_reply(holds, &mut rng))
            }
            PromptTemplate::ExtractObjects => single(self.extraction_reply(text, view)?),
            PromptTemplate::SelectPredicates => single(self.selection_reply(text, view)?),
            PromptTemplate::GenerateGoal => single(view.goal.clone()),
            PromptTemplate::PlannerObs => self.planner_reply(req, &mut rng)?,
            PromptTemplate::PlannerSystem | PromptTemplate::PlannerEnv => {
                single("Understood. Waiting for the next input.".to_string())
            }
        })
    }
}
