use std::fmt::Write;

use super::{DomainModel, ProblemModel, TypedName};

fn typed(names: &[TypedName], var: bool) -> String {
    let prefix = if var { "?" } else { "" };
    names
        .iter()
        .map(|n| format!("{prefix}{} - {}", n.name, n.ty))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical text for a domain. Empty sections are omitted.
pub fn print_domain(d: &DomainModel) -> String {
    let mut out = format!("(define (domain {})", d.name);
    if !d.requirements.is_empty() {
        let _ = write!(out, "\n  (:requirements {})", d.requirements.join(" "));
    }
    if !d.types.is_empty() {
        out.push_str("\n  (:types");
        for t in &d.types {
            let _ = write!(out, "\n    {} - {}", t.name, t.parent);
        }
        out.push_str("\n  )");
    }
    if !d.predicates.is_empty() {
        out.push_str("\n  (:predicates");
        for p in &d.predicates {
            if p.params.is_empty() {
                let _ = write!(out, "\n    ({})", p.name);
            } else {
                let _ = write!(out, "\n    ({} {})", p.name, typed(&p.params, true));
            }
        }
        out.push_str("\n  )");
    }
    for a in &d.actions {
        let _ = write!(
            out,
            "\n  (:action {}\n    :parameters ({})\n    :precondition {}\n    :effect {}\n  )",
            a.name,
            typed(&a.params, true),
            a.precondition,
            a.effect
        );
    }
    if out.contains('\n') {
        out.push('\n');
    }
    out.push(')');
    out
}

/// Canonical text for a problem.
pub fn print_problem(p: &ProblemModel) -> String {
    let mut out = format!("(define (problem {})\n  (:domain {})", p.name, p.domain_name);
    if !p.objects.is_empty() {
        out.push_str("\n  (:objects");
        for o in &p.objects {
            let _ = write!(out, "\n    {} - {}", o.name, o.ty);
        }
        out.push_str("\n  )");
    }
    out.push_str("\n  (:init");
    for a in &p.init {
        let _ = write!(out, "\n    {a}");
    }
    let _ = write!(out, "\n  )\n  (:goal {})\n)", p.goal);
    out
}
