//! Instruction augmentation: turns an instruction and the current
//! observation into a PDDL problem each step.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::Grounder;
use crate::oracle::{
    derive_seed, eval_promptable, render_prompt, slot_map, Backend, BackendRequest, Message, OracleError,
    PromptTemplate, TruthView,
};
use crate::pddl::{
    parse_formula, parse_ground_action, parse_problem, print_problem, DomainModel, Formula, GroundAtom,
    PredicateKind, ProblemModel, State, TypedName,
};
use crate::worldsim::WorldState;

/// Type given to every object in generated problems.
pub const OBJECT_TYPE: &str = "locatable";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("object extraction failed: {0}")]
    Extraction(String),
    #[error("predicate selection failed: {0}")]
    Selection(String),
    #[error("goal generation failed: {0}")]
    Goal(String),
    #[error("problem references unlisted object `{0}`")]
    DanglingObject(String),
    #[error("problem text does not round-trip: {0}")]
    RoundTrip(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectExtraction {
    pub object_name: String,
    pub related_object_name: String,
    pub other_object_names: Vec<String>,
}

impl ObjectExtraction {
    /// All names, object first, without repeats or blanks.
    pub fn all(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        std::iter::once(&self.object_name)
            .chain(std::iter::once(&self.related_object_name))
            .chain(self.other_object_names.iter())
            .filter(|n| !n.is_empty() && seen.insert(n.as_str()))
            .cloned()
            .collect()
    }
}

/// Lowercase with `_` joining words.
pub fn identifier(name: &str) -> String {
    name.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateRequest {
    pub atom: GroundAtom,
    pub kind: PredicateKind,
}

fn single_turn(text: String, seed: u64) -> BackendRequest {
    BackendRequest::new(vec![Message::user(text)]).with_seed(seed)
}

fn reply_text(backend: &dyn Backend, req: &BackendRequest, view: &TruthView) -> Result<String, OracleError> {
    let resp = backend.complete(req, view)?;
    resp.first_text()
        .map(str::to_string)
        .ok_or_else(|| OracleError::MalformedResponse("no candidates".into()))
}

pub fn extract_objects(
    instruction: &str,
    backend: &dyn Backend,
    view: &TruthView,
    seed: u64,
) -> Result<ObjectExtraction, AugmentError> {
    if instruction.trim().is_empty() {
        return Err(AugmentError::Extraction("empty instruction".into()));
    }
    let text = render_prompt(
        PromptTemplate::ExtractObjects,
        &slot_map([("INSTRUCTION", instruction.to_string())]),
    )?;
    let reply = reply_text(backend, &single_turn(text, seed), view)?;
    parse_extraction(&reply)
}

/// Reads the JSON reply; all three fields are required.
pub fn parse_extraction(reply: &str) -> Result<ObjectExtraction, AugmentError> {
    let body = reply.trim().trim_start_matches("```json").trim_matches('`').trim();
    let raw: ObjectExtraction = serde_json::from_str(body).map_err(|e| AugmentError::Extraction(e.to_string()))?;
    let out = ObjectExtraction {
        object_name: identifier(&raw.object_name),
        related_object_name: identifier(&raw.related_object_name),
        other_object_names: raw.other_object_names.iter().map(|n| identifier(n)).collect(),
    };
    if out.object_name.is_empty() {
        return Err(AugmentError::Extraction("empty object_name".into()));
    }
    Ok(out)
}

fn predicate_listing(domain: &DomainModel) -> String {
    domain
        .predicates
        .iter()
        .map(|p| {
            let params: Vec<String> = p
                .params
                .iter()
                .map(|t| {
                    if t.ty == crate::pddl::ROOT_TYPE {
                        format!("?{}", t.name)
                    } else {
                        format!("?{} - {}", t.name, t.ty)
                    }
                })
                .collect();
            if params.is_empty() {
                format!("({})", p.name)
            } else {
                format!("({} {})", p.name, params.join(" "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn action_listing(domain: &DomainModel) -> String {
    domain
        .actions
        .iter()
        .map(|a| {
            let params: Vec<String> = a.params.iter().map(|t| format!("?{}", t.name)).collect();
            if params.is_empty() {
                format!("({})", a.name)
            } else {
                format!("({} {})", a.name, params.join(" "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn select_predicates(
    instruction: &str,
    objects: &ObjectExtraction,
    domain: &DomainModel,
    backend: &dyn Backend,
    view: &TruthView,
    seed: u64,
) -> Result<Vec<PredicateRequest>, AugmentError> {
    let names = objects.all();
    if names.is_empty() {
        return Err(AugmentError::Selection("no objects".into()));
    }
    let text = render_prompt(
        PromptTemplate::SelectPredicates,
        &slot_map([
            ("INSTRUCTION", instruction.to_string()),
            ("OBJECTS", names.join(", ")),
            ("PREDICATES", predicate_listing(domain)),
            ("ACTIONS", action_listing(domain)),
        ]),
    )?;
    let reply = reply_text(backend, &single_turn(text, seed), view)?;
    parse_selection(&reply, &names, domain)
}

/// Keeps well-formed lines over known predicates and objects, in order of
/// first appearance.
pub fn parse_selection(reply: &str, objects: &[String], domain: &DomainModel) -> Result<Vec<PredicateRequest>, AugmentError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| l.starts_with('(')) {
        let Some(parsed) = parse_ground_action(line) else {
            log::warn!("dropping unparseable selection line {line:?}");
            continue;
        };
        let Some(schema) = domain.predicate(&parsed.schema) else {
            log::warn!("dropping unknown predicate in {line:?}");
            continue;
        };
        if schema.params.len() != parsed.args.len() {
            log::warn!("dropping arity mismatch in {line:?}");
            continue;
        }
        let args: Vec<String> = parsed.args.iter().map(|a| identifier(a)).collect();
        if let Some(bad) = args.iter().find(|a| !objects.contains(a)) {
            log::warn!("dropping unknown object {bad} in {line:?}");
            continue;
        }
        let atom = GroundAtom::new(parsed.schema, args);
        if seen.insert(atom.clone()) {
            out.push(PredicateRequest {
                kind: schema.kind,
                atom,
            });
        }
    }
    if out.is_empty() {
        return Err(AugmentError::Selection("no valid predicate lines".into()));
    }
    Ok(out)
}

/// Result of evaluating the selected predicates for one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitReport {
    pub init: State,
    /// Promptable atoms whose reply could not be read, with the error.
    pub promptable_failures: Vec<(GroundAtom, String)>,
}

/// Everything `assemble_init` reads besides the request list.
pub struct Observation<'a> {
    pub world: &'a WorldState,
    pub grounder: &'a Grounder,
    pub backend: &'a dyn Backend,
    pub view: &'a TruthView,
    pub instruction: &'a str,
    pub seed: u64,
}

pub fn assemble_init(requests: &[PredicateRequest], obs: &Observation<'_>) -> InitReport {
    let mut report = InitReport::default();
    for r in requests {
        let truth = match r.kind {
            PredicateKind::Promptable => {
                let seed = derive_seed(obs.seed, &[&r.atom.to_string()]);
                match eval_promptable(&r.atom, obs.instruction, obs.view, obs.backend, seed) {
                    Ok(b) => b,
                    Err(e) => {
                        report.promptable_failures.push((r.atom.clone(), e.to_string()));
                        false
                    }
                }
            }
            PredicateKind::Grounded => match obs.grounder.evaluate(obs.world, &r.atom) {
                Ok(b) => b,
                Err(e) => {
                    log::debug!("grounding {}: {e}", r.atom);
                    false
                }
            },
        };
        if truth {
            report.init.insert(r.atom.clone());
        }
    }
    report
}

pub fn generate_goal(
    instruction: &str,
    domain: &DomainModel,
    backend: &dyn Backend,
    view: &TruthView,
    seed: u64,
) -> Result<Formula, AugmentError> {
    if instruction.trim().is_empty() {
        return Err(AugmentError::Goal("empty instruction".into()));
    }
    let text = render_prompt(
        PromptTemplate::GenerateGoal,
        &slot_map([
            ("INSTRUCTION", instruction.to_string()),
            ("PREDICATES", predicate_listing(domain)),
        ]),
    )?;
    let reply = reply_text(backend, &single_turn(text, seed), view)?;
    parse_goal(&reply, domain)
}

pub fn parse_goal(reply: &str, domain: &DomainModel) -> Result<Formula, AugmentError> {
    let goal = parse_formula(reply.trim(), Some(domain)).map_err(|e| AugmentError::Goal(e.to_string()))?;
    if goal.atoms().iter().any(|a| a.args.iter().any(|t| matches!(t, crate::pddl::Term::Var(_)))) {
        return Err(AugmentError::Goal("goal has variables".into()));
    }
    Ok(goal)
}

/// Builds the step problem and its text, checking that the text parses
/// back to the same model.
pub fn build_problem(
    name: &str,
    objects: &[String],
    init: &State,
    goal: &Formula,
    domain: &DomainModel,
) -> Result<(ProblemModel, String), AugmentError> {
    let listed: BTreeSet<&str> = objects.iter().map(String::as_str).collect();
    for c in goal.constants() {
        if !listed.contains(c.as_str()) {
            return Err(AugmentError::DanglingObject(c));
        }
    }
    for a in init {
        if let Some(bad) = a.args.iter().find(|x| !listed.contains(x.as_str())) {
            return Err(AugmentError::DanglingObject(bad.clone()));
        }
    }
    let model = ProblemModel {
        name: name.to_string(),
        domain_name: domain.name.clone(),
        objects: objects.iter().map(|o| TypedName::new(o.clone(), OBJECT_TYPE)).collect(),
        init: init.clone(),
        goal: goal.clone(),
    };
    let text = print_problem(&model);
    let back = parse_problem(&text, domain).map_err(|e| AugmentError::RoundTrip(e.to_string()))?;
    if back != model {
        return Err(AugmentError::RoundTrip("parsed problem differs".into()));
    }
    Ok((model, text))
}
