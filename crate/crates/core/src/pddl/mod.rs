//! PDDL domain and problem models for the room domain.
//!
//! Covers the STRIPS fragment with typing, negative and disjunctive
//! preconditions. Formulas are evaluated under the closed-world assumption.

mod eval;
mod parse;
mod print;
mod search;
pub mod sexpr;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{applicable, apply, ground_actions, holds, instantiate, GroundedAction};
pub use parse::{parse_domain, parse_formula, parse_ground_action, parse_problem, parse_problem_unchecked};
pub use search::{forward_search, SearchOutcome};

/// Root of the type hierarchy.
pub const ROOT_TYPE: &str = "object";

/// The shipped room domain.
pub const CANONICAL_DOMAIN: &str = include_str!("../../assets/domain/room.pddl");

/// Parses the shipped room domain.
pub fn canonical_domain() -> DomainModel {
    parse_domain(CANONICAL_DOMAIN).expect("shipped domain parses")
}

/// Predicates answered by querying a language model.
pub const PROMPTABLE_PREDICATES: [&str; 4] = ["on", "in", "holding", "opened"];
/// Predicates computed by geometric grounding.
pub const GROUNDED_PREDICATES: [&str; 6] = ["at", "find", "graspable", "placeable", "detected", "reachable"];
/// Actions whose job is recovery or termination rather than task progress.
pub const RECOVERY_ACTIONS: [&str; 3] = ["adjust", "alert", "stop"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PddlError {
    #[error("{line}:{col}: syntax error: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("{line}:{col}: {message}")]
    Semantic { line: usize, col: usize, message: String },
    #[error("free variable ?{0} in a formula that must be ground")]
    FreeVariable(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{name}` expects {expected} arguments, got {got}")]
    ActionArity { name: String, expected: usize, got: usize },
    #[error("action {0} is not applicable in this state")]
    Inapplicable(String),
    #[error("search budget must be positive")]
    ZeroBudget,
}

impl PddlError {
    pub(crate) fn semantic(line: usize, col: usize, message: impl Into<String>) -> Self {
        PddlError::Semantic {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    Promptable,
    Grounded,
}

impl PredicateKind {
    pub fn of(name: &str) -> Self {
        if PROMPTABLE_PREDICATES.contains(&name) {
            PredicateKind::Promptable
        } else {
            PredicateKind::Grounded
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedName {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

impl TypedName {
    pub fn new(name: impl Into<String>, ty: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ty: ty.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDecl {
    pub name: String,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSchema {
    pub name: String,
    pub params: Vec<TypedName>,
    pub kind: PredicateKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedName>,
    pub precondition: Formula,
    pub effect: Formula,
}

impl ActionSchema {
    pub fn is_recovery(&self) -> bool {
        RECOVERY_ACTIONS.contains(&self.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Variable name without the leading `?`.
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
}

impl Formula {
    pub fn truth() -> Self {
        Formula::And(Vec::new())
    }

    pub fn ground_atom(atom: &GroundAtom) -> Self {
        Formula::Atom(Atom {
            predicate: atom.predicate.clone(),
            args: atom.args.iter().cloned().map(Term::Const).collect(),
        })
    }

    /// Visits every atom in the tree.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.collect_atoms(out)),
            Formula::Not(c) => c.collect_atoms(out),
        }
    }

    /// Constants referenced anywhere in the formula.
    pub fn constants(&self) -> BTreeSet<String> {
        self.atoms()
            .into_iter()
            .flat_map(|a| a.args.iter())
            .filter_map(|t| match t {
                Term::Const(c) => Some(c.clone()),
                Term::Var(_) => None,
            })
            .collect()
    }

    /// Splits a STRIPS effect into (add, delete) atom lists; `None` if the
    /// formula is not a conjunction of literals.
    pub fn literals(&self) -> Option<(Vec<&Atom>, Vec<&Atom>)> {
        let mut add = Vec::new();
        let mut del = Vec::new();
        fn walk<'a>(f: &'a Formula, add: &mut Vec<&'a Atom>, del: &mut Vec<&'a Atom>) -> bool {
            match f {
                Formula::Atom(a) => {
                    add.push(a);
                    true
                }
                Formula::Not(inner) => match inner.as_ref() {
                    Formula::Atom(a) => {
                        del.push(a);
                        true
                    }
                    _ => false,
                },
                Formula::And(cs) => cs.iter().all(|c| walk(c, add, del)),
                Formula::Or(_) => false,
            }
        }
        walk(self, &mut add, &mut del).then_some((add, del))
    }
}

/// A predicate applied to object names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Self {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn kind(&self) -> PredicateKind {
        PredicateKind::of(&self.predicate)
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// Closed-world state: the set of true ground atoms.
pub type State = BTreeSet<GroundAtom>;

/// An action schema bound to concrete objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAction {
    pub schema: String,
    pub args: Vec<String>,
}

impl GroundAction {
    pub fn new<S: Into<String>>(schema: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Self {
            schema: schema.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_recovery(&self) -> bool {
        RECOVERY_ACTIONS.contains(&self.schema.as_str())
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.schema)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainModel {
    pub name: String,
    pub requirements: Vec<String>,
    pub types: Vec<TypeDecl>,
    pub predicates: Vec<PredicateSchema>,
    pub actions: Vec<ActionSchema>,
}

impl DomainModel {
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            requirements: Vec::new(),
            types: Vec::new(),
            predicates: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateSchema> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    pub fn has_type(&self, name: &str) -> bool {
        name == ROOT_TYPE || self.types.iter().any(|t| t.name == name)
    }

    /// Whether `ty` equals `ancestor` or descends from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut current = ty;
        // bounded walk; the parser rejects cycles but hand-built models may not
        for _ in 0..=self.types.len() {
            if current == ancestor {
                return true;
            }
            match self.types.iter().find(|t| t.name == current) {
                Some(t) => current = &t.parent,
                None => return current == ancestor,
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemModel {
    pub name: String,
    pub domain_name: String,
    pub objects: Vec<TypedName>,
    pub init: State,
    pub goal: Formula,
}

impl ProblemModel {
    pub fn object_names(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|o| o.name.as_str())
    }

    pub fn has_object(&self, name: &str) -> bool {
        self.objects.iter().any(|o| o.name == name)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => {
                write!(f, "({}", a.predicate)?;
                for t in &a.args {
                    write!(f, " {t}")?;
                }
                f.write_str(")")
            }
            Formula::And(cs) | Formula::Or(cs) => {
                let op = if matches!(self, Formula::And(_)) { "and" } else { "or" };
                write!(f, "({op}")?;
                for c in cs {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
            Formula::Not(c) => write!(f, "(not {c})"),
        }
    }
}

impl fmt::Display for DomainModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::print_domain(self))
    }
}

impl fmt::Display for ProblemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::print_problem(self))
    }
}

pub use print::{print_domain, print_problem};
