use std::collections::{BTreeSet, HashSet};

use super::sexpr::{parse_one, Node, SExpr};
use super::{
    ActionSchema, Atom, DomainModel, Formula, GroundAction, GroundAtom, PddlError, PredicateKind, PredicateSchema,
    ProblemModel, Term, TypeDecl, TypedName, ROOT_TYPE,
};

type Result<T> = std::result::Result<T, PddlError>;

fn syntax(e: &SExpr, expected: &str) -> PddlError {
    PddlError::Syntax {
        line: e.line,
        col: e.col,
        expected: expected.to_string(),
        found: e.describe(),
    }
}

fn expect_list<'a>(e: &'a SExpr, expected: &str) -> Result<&'a [SExpr]> {
    e.list().ok_or_else(|| syntax(e, expected))
}

fn expect_symbol<'a>(e: &'a SExpr, expected: &str) -> Result<&'a str> {
    e.symbol().ok_or_else(|| syntax(e, expected))
}

/// `(head NAME)` such as `(domain room)`.
fn header<'a>(e: &'a SExpr, head: &str) -> Result<&'a str> {
    let items = expect_list(e, &format!("({head} <name>)"))?;
    match items {
        [kw, name] if kw.is_keyword(head) => expect_symbol(name, "a name"),
        _ => Err(syntax(e, &format!("({head} <name>)"))),
    }
}

struct TypedEntry<'a> {
    name: &'a str,
    ty: String,
    at: &'a SExpr,
}

/// Reads `a b - t c - u d`; untyped trailing names get the root type.
fn typed_list(items: &[SExpr]) -> Result<Vec<TypedEntry<'_>>> {
    let mut out = Vec::new();
    let mut pending: Vec<&SExpr> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let item = &items[i];
        let sym = expect_symbol(item, "a name")?;
        if sym == "-" {
            let ty_expr = items.get(i + 1).ok_or_else(|| syntax(item, "a type after `-`"))?;
            let ty = expect_symbol(ty_expr, "a type name")?;
            if pending.is_empty() {
                return Err(syntax(item, "a name before `-`"));
            }
            for p in pending.drain(..) {
                out.push(TypedEntry {
                    name: p.symbol().unwrap_or_default(),
                    ty: ty.to_string(),
                    at: p,
                });
            }
            i += 2;
        } else {
            pending.push(item);
            i += 1;
        }
    }
    for p in pending {
        out.push(TypedEntry {
            name: p.symbol().unwrap_or_default(),
            ty: ROOT_TYPE.to_string(),
            at: p,
        });
    }
    Ok(out)
}

fn variable_name<'a>(e: &'a SExpr, name: &'a str) -> Result<&'a str> {
    name.strip_prefix('?')
        .filter(|v| !v.is_empty())
        .ok_or_else(|| syntax(e, "a variable starting with `?`"))
}

/// What a formula may reference.
enum Scope<'a> {
    /// Action body: variables must be parameters, constants are not allowed.
    Action(&'a HashSet<String>),
    /// Problem: only declared objects, no variables.
    Objects(&'a HashSet<String>),
    /// Standalone: anything syntactically valid.
    Free,
}

struct FormulaReader<'a> {
    predicates: Option<&'a [PredicateSchema]>,
    scope: Scope<'a>,
}

impl FormulaReader<'_> {
    fn read(&self, e: &SExpr) -> Result<Formula> {
        let items = expect_list(e, "a formula")?;
        let Some(head) = items.first() else {
            return Err(syntax(e, "a non-empty formula"));
        };
        let head_sym = expect_symbol(head, "a predicate or connective")?;
        let lower = head_sym.to_ascii_lowercase();
        match lower.as_str() {
            "and" | "or" => {
                let children = items[1..].iter().map(|c| self.read(c)).collect::<Result<Vec<_>>>()?;
                Ok(if lower == "and" {
                    Formula::And(children)
                } else {
                    Formula::Or(children)
                })
            }
            "not" => match &items[1..] {
                [inner] => Ok(Formula::Not(Box::new(self.read(inner)?))),
                _ => Err(syntax(e, "exactly one operand for `not`")),
            },
            "imply" | "forall" | "exists" | "when" | "=" => Err(PddlError::semantic(
                head.line,
                head.col,
                format!("unsupported connective `{head_sym}`"),
            )),
            _ => self.read_atom(head, head_sym, &items[1..]).map(Formula::Atom),
        }
    }

    fn read_atom(&self, head: &SExpr, name: &str, args: &[SExpr]) -> Result<Atom> {
        let mut terms = Vec::with_capacity(args.len());
        for a in args {
            let sym = expect_symbol(a, "a term")?;
            let term = if sym.starts_with('?') {
                let v = variable_name(a, sym)?;
                match &self.scope {
                    Scope::Action(vars) if !vars.contains(v) => {
                        return Err(PddlError::semantic(a.line, a.col, format!("unbound variable `{sym}`")))
                    }
                    Scope::Objects(_) => {
                        return Err(PddlError::semantic(
                            a.line,
                            a.col,
                            format!("variable `{sym}` not allowed here"),
                        ))
                    }
                    _ => {}
                }
                Term::Var(v.to_string())
            } else {
                match &self.scope {
                    Scope::Action(_) => {
                        return Err(PddlError::semantic(a.line, a.col, format!("unknown constant `{sym}`")))
                    }
                    Scope::Objects(objs) if !objs.contains(sym) => {
                        return Err(PddlError::semantic(a.line, a.col, format!("undeclared object `{sym}`")))
                    }
                    _ => {}
                }
                Term::Const(sym.to_string())
            };
            terms.push(term);
        }
        if let Some(preds) = self.predicates {
            let schema = preds
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| PddlError::semantic(head.line, head.col, format!("unknown predicate `{name}`")))?;
            if schema.params.len() != terms.len() {
                return Err(PddlError::semantic(
                    head.line,
                    head.col,
                    format!(
                        "arity mismatch: `{name}` takes {} argument(s), got {}",
                        schema.params.len(),
                        terms.len()
                    ),
                ));
            }
        }
        Ok(Atom {
            predicate: name.to_string(),
            args: terms,
        })
    }
}

/// Parses a domain definition and checks it for internal consistency.
pub fn parse_domain(text: &str) -> Result<DomainModel> {
    let root = parse_one(text)?;
    let items = expect_list(&root, "(define ...)")?;
    if !items.first().is_some_and(|h| h.is_keyword("define")) {
        return Err(syntax(items.first().unwrap_or(&root), "`define`"));
    }
    let name_expr = items.get(1).ok_or_else(|| syntax(&root, "(domain <name>)"))?;
    let name = header(name_expr, "domain")?.to_string();

    let mut domain = DomainModel::empty(name);
    let mut type_exprs: Vec<&SExpr> = Vec::new();
    let mut pred_entries: Vec<&SExpr> = Vec::new();
    let mut action_exprs: Vec<&SExpr> = Vec::new();

    for section in &items[2..] {
        let body = expect_list(section, "a domain section")?;
        let Some(head) = body.first() else {
            return Err(syntax(section, "a domain section"));
        };
        let kw = expect_symbol(head, "a section keyword")?.to_ascii_lowercase();
        match kw.as_str() {
            ":requirements" => {
                for r in &body[1..] {
                    let flag = expect_symbol(r, "a requirement flag")?;
                    if !flag.starts_with(':') {
                        return Err(syntax(r, "a requirement flag starting with `:`"));
                    }
                    domain.requirements.push(flag.to_string());
                }
            }
            ":types" => type_exprs.extend(&body[1..]),
            ":predicates" => collect_predicates(&body[1..], &mut pred_entries)?,
            ":functions" => {
                if let Some(f) = body.get(1) {
                    return Err(PddlError::semantic(f.line, f.col, "numeric fluents are not supported"));
                }
            }
            ":action" => action_exprs.push(section),
            _ => {
                return Err(PddlError::semantic(
                    head.line,
                    head.col,
                    format!("unsupported domain section `{}`", head.symbol().unwrap_or_default()),
                ))
            }
        }
    }

    let owned_types: Vec<SExpr> = type_exprs.into_iter().cloned().collect();
    let type_entries = typed_list(&owned_types)?;
    for entry in &type_entries {
        if entry.name == ROOT_TYPE || domain.types.iter().any(|t| t.name == entry.name) {
            return Err(PddlError::semantic(
                entry.at.line,
                entry.at.col,
                format!("duplicate type `{}`", entry.name),
            ));
        }
        domain.types.push(TypeDecl {
            name: entry.name.to_string(),
            parent: entry.ty.clone(),
        });
    }
    for entry in &type_entries {
        if !domain.has_type(&entry.ty) {
            return Err(PddlError::semantic(
                entry.at.line,
                entry.at.col,
                format!("undeclared type `{}`", entry.ty),
            ));
        }
    }
    for t in &domain.types {
        if !domain.is_subtype(&t.name, ROOT_TYPE) {
            return Err(PddlError::semantic(root.line, root.col, format!("type `{}` is part of a cycle", t.name)));
        }
    }

    for entry in pred_entries {
        let pred = read_predicate(entry, &domain)?;
        if domain.predicate(&pred.name).is_some() {
            return Err(PddlError::semantic(
                entry.line,
                entry.col,
                format!("duplicate predicate `{}`", pred.name),
            ));
        }
        domain.predicates.push(pred);
    }

    for expr in action_exprs {
        let action = read_action(expr, &domain)?;
        if domain.action(&action.name).is_some() {
            return Err(PddlError::semantic(
                expr.line,
                expr.col,
                format!("duplicate action `{}`", action.name),
            ));
        }
        domain.actions.push(action);
    }
    Ok(domain)
}

/// Tolerates a `(:predicates ...)` block nested inside another.
fn collect_predicates<'a>(entries: &'a [SExpr], out: &mut Vec<&'a SExpr>) -> Result<()> {
    for e in entries {
        let items = expect_list(e, "a predicate declaration")?;
        if items.first().is_some_and(|h| h.is_keyword(":predicates")) {
            collect_predicates(&items[1..], out)?;
        } else {
            out.push(e);
        }
    }
    Ok(())
}

fn read_params(list: &[SExpr], domain: &DomainModel) -> Result<Vec<TypedName>> {
    let mut params: Vec<TypedName> = Vec::new();
    for entry in typed_list(list)? {
        let v = variable_name(entry.at, entry.name)?;
        if !domain.has_type(&entry.ty) {
            return Err(PddlError::semantic(
                entry.at.line,
                entry.at.col,
                format!("undeclared type `{}`", entry.ty),
            ));
        }
        if params.iter().any(|p| p.name == v) {
            return Err(PddlError::semantic(
                entry.at.line,
                entry.at.col,
                format!("duplicate parameter `?{v}`"),
            ));
        }
        params.push(TypedName::new(v, entry.ty));
    }
    Ok(params)
}

fn read_predicate(e: &SExpr, domain: &DomainModel) -> Result<PredicateSchema> {
    let items = expect_list(e, "a predicate declaration")?;
    let head = items.first().ok_or_else(|| syntax(e, "a predicate declaration"))?;
    let name = expect_symbol(head, "a predicate name")?.to_string();
    let params = read_params(&items[1..], domain)?;
    Ok(PredicateSchema {
        kind: PredicateKind::of(&name),
        name,
        params,
    })
}

fn read_action(e: &SExpr, domain: &DomainModel) -> Result<ActionSchema> {
    let items = expect_list(e, "an action")?;
    let name_expr = items.get(1).ok_or_else(|| syntax(e, "an action name"))?;
    let name = expect_symbol(name_expr, "an action name")?.to_string();
    let mut params = Vec::new();
    let mut pre_expr = None;
    let mut eff_expr = None;
    let mut i = 2;
    while i < items.len() {
        let key = &items[i];
        let value = items.get(i + 1).ok_or_else(|| syntax(key, "a value after the keyword"))?;
        let kw = expect_symbol(key, "an action keyword")?.to_ascii_lowercase();
        match kw.as_str() {
            ":parameters" => params = read_params(expect_list(value, "a parameter list")?, domain)?,
            ":precondition" => pre_expr = Some(value),
            ":effect" => eff_expr = Some(value),
            _ => {
                return Err(PddlError::semantic(
                    key.line,
                    key.col,
                    format!("unsupported action keyword `{}`", key.symbol().unwrap_or_default()),
                ))
            }
        }
        i += 2;
    }
    let vars: HashSet<String> = params.iter().map(|p| p.name.clone()).collect();
    let reader = FormulaReader {
        predicates: Some(&domain.predicates),
        scope: Scope::Action(&vars),
    };
    let precondition = match pre_expr {
        Some(p) => reader.read(p)?,
        None => Formula::truth(),
    };
    let effect = match eff_expr {
        Some(p) => {
            let f = reader.read(p)?;
            if f.literals().is_none() {
                return Err(PddlError::semantic(
                    p.line,
                    p.col,
                    format!("effect of `{name}` must be a conjunction of literals"),
                ));
            }
            f
        }
        None => Formula::truth(),
    };
    Ok(ActionSchema {
        name,
        params,
        precondition,
        effect,
    })
}

/// Parses a problem and checks it against `domain`.
pub fn parse_problem(text: &str, domain: &DomainModel) -> Result<ProblemModel> {
    read_problem(text, Some(domain))
}

/// Parses a problem checking only internal consistency (declared objects).
pub fn parse_problem_unchecked(text: &str) -> Result<ProblemModel> {
    read_problem(text, None)
}

fn read_problem(text: &str, domain: Option<&DomainModel>) -> Result<ProblemModel> {
    let root = parse_one(text)?;
    let items = expect_list(&root, "(define ...)")?;
    if !items.first().is_some_and(|h| h.is_keyword("define")) {
        return Err(syntax(items.first().unwrap_or(&root), "`define`"));
    }
    let name_expr = items.get(1).ok_or_else(|| syntax(&root, "(problem <name>)"))?;
    let name = header(name_expr, "problem")?.to_string();

    let mut domain_name = None;
    let mut objects: Vec<TypedName> = Vec::new();
    let mut init_expr: Option<&[SExpr]> = None;
    let mut goal_expr: Option<&SExpr> = None;

    for section in &items[2..] {
        let body = expect_list(section, "a problem section")?;
        let Some(head) = body.first() else {
            return Err(syntax(section, "a problem section"));
        };
        let kw = expect_symbol(head, "a section keyword")?.to_ascii_lowercase();
        match kw.as_str() {
            ":domain" => {
                let d = body.get(1).ok_or_else(|| syntax(section, "a domain name"))?;
                domain_name = Some(expect_symbol(d, "a domain name")?.to_string());
            }
            ":objects" => {
                for entry in typed_list(&body[1..])? {
                    if entry.name.starts_with('?') {
                        return Err(syntax(entry.at, "an object name"));
                    }
                    if let Some(d) = domain {
                        if !d.has_type(&entry.ty) {
                            return Err(PddlError::semantic(
                                entry.at.line,
                                entry.at.col,
                                format!("undeclared type `{}`", entry.ty),
                            ));
                        }
                    }
                    if objects.iter().any(|o| o.name == entry.name) {
                        return Err(PddlError::semantic(
                            entry.at.line,
                            entry.at.col,
                            format!("duplicate object `{}`", entry.name),
                        ));
                    }
                    objects.push(TypedName::new(entry.name, entry.ty));
                }
            }
            ":init" => init_expr = Some(&body[1..]),
            ":goal" => match &body[1..] {
                [g] => goal_expr = Some(g),
                _ => return Err(syntax(section, "exactly one goal formula")),
            },
            _ => {
                return Err(PddlError::semantic(
                    head.line,
                    head.col,
                    format!("unsupported problem section `{}`", head.symbol().unwrap_or_default()),
                ))
            }
        }
    }

    let domain_name = domain_name.ok_or_else(|| syntax(&root, "a (:domain <name>) section"))?;
    if let Some(d) = domain {
        if d.name != domain_name {
            return Err(PddlError::semantic(
                name_expr.line,
                name_expr.col,
                format!("problem is for domain `{domain_name}`, not `{}`", d.name),
            ));
        }
    }
    let object_set: HashSet<String> = objects.iter().map(|o| o.name.clone()).collect();
    let reader = FormulaReader {
        predicates: domain.map(|d| d.predicates.as_slice()),
        scope: Scope::Objects(&object_set),
    };

    let mut init = BTreeSet::new();
    for entry in init_expr.unwrap_or_default() {
        match reader.read(entry)? {
            Formula::Atom(a) => {
                init.insert(GroundAtom {
                    predicate: a.predicate,
                    args: a
                        .args
                        .into_iter()
                        .map(|t| match t {
                            Term::Const(c) | Term::Var(c) => c,
                        })
                        .collect(),
                });
            }
            _ => return Err(PddlError::semantic(entry.line, entry.col, "init entries must be positive atoms")),
        }
    }
    let goal_expr = goal_expr.ok_or_else(|| syntax(&root, "a (:goal ...) section"))?;
    let goal = reader.read(goal_expr)?;

    Ok(ProblemModel {
        name,
        domain_name,
        objects,
        init,
        goal,
    })
}

/// Parses a standalone formula such as a generated goal.
///
/// With a domain, predicates and arities are checked.
pub fn parse_formula(text: &str, domain: Option<&DomainModel>) -> Result<Formula> {
    let e = parse_one(text)?;
    FormulaReader {
        predicates: domain.map(|d| d.predicates.as_slice()),
        scope: Scope::Free,
    }
    .read(&e)
}

/// Parses the first s-expression of the form `(name arg...)` in `text`.
///
/// Text before the opening parenthesis is skipped; nested lists are rejected.
pub fn parse_ground_action(text: &str) -> Option<GroundAction> {
    let start = text.find('(')?;
    let end = start + text[start..].find(')')?;
    let e = parse_one(&text[start..=end]).ok()?;
    let items = e.list()?;
    let (head, rest) = items.split_first()?;
    let schema = head.symbol()?;
    let args = rest
        .iter()
        .map(|a| match &a.node {
            Node::Symbol(s) if !s.starts_with('?') => Some(s.clone()),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(GroundAction::new(schema.to_ascii_lowercase(), args))
}
