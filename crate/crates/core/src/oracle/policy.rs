//! Heuristic next-action policy behind the scripted backend.
//!
//! The policy plans in an optimistic copy of the domain it was shown:
//! moving next to an object or adjusting the pose there is assumed to
//! bring it within reach, opening a container is assumed to free what it
//! holds, and other feasibility atoms are assumed true. The first step of that plan is proposed when
//! the real preconditions hold; otherwise the matching recovery action.

use std::collections::BTreeSet;

use crate::pddl::{
    applicable, forward_search, ground_actions, holds, instantiate, Atom, DomainModel, Formula, GroundAction,
    GroundAtom, ProblemModel, State, Term, TypedName,
};

/// Predicates that only carry feasibility feedback.
pub const FEASIBILITY_PREDICATES: [&str; 4] = ["find", "graspable", "placeable", "reachable"];
/// Feasibility predicates whose absence `adjust` can repair.
const ADJUSTABLE: [&str; 3] = ["reachable", "graspable", "placeable"];
const SEARCH_BUDGET: usize = 50_000;

fn prune(f: &Formula, drop: &dyn Fn(&str) -> bool) -> Option<Formula> {
    match f {
        Formula::Atom(a) => (!drop(&a.predicate)).then(|| f.clone()),
        Formula::Not(inner) => prune(inner, drop).map(|g| Formula::Not(Box::new(g))),
        Formula::And(cs) => Some(Formula::And(cs.iter().filter_map(|c| prune(c, drop)).collect())),
        Formula::Or(cs) => Some(Formula::Or(cs.iter().filter_map(|c| prune(c, drop)).collect())),
    }
}

/// The domain with every feasibility predicate removed from its
/// declarations and from all preconditions and effects.
pub fn strip_feasibility(domain: &DomainModel) -> DomainModel {
    let drop = |p: &str| FEASIBILITY_PREDICATES.contains(&p);
    let mut d = domain.clone();
    d.predicates.retain(|p| !drop(&p.name));
    for a in &mut d.actions {
        a.precondition = prune(&a.precondition, &drop).unwrap_or_else(Formula::truth);
        a.effect = prune(&a.effect, &drop).unwrap_or_else(Formula::truth);
    }
    d
}

fn var_atom(pred: &str, vars: &[&str]) -> Formula {
    Formula::Atom(Atom {
        predicate: pred.to_string(),
        args: vars.iter().map(|v| Term::Var(v.to_string())).collect(),
    })
}

fn add_conjunct(f: &mut Formula, extra: Formula) {
    match f {
        Formula::And(cs) => cs.push(extra),
        other => *other = Formula::And(vec![other.clone(), extra]),
    }
}

/// Optimistic planning model used by the policy.
pub fn relaxed_domain(domain: &DomainModel) -> DomainModel {
    let mut d = domain.clone();
    let has = |p: &str| domain.predicate(p).is_some();
    if has("reachable") && has("at") {
        // walking up to an object brings it in reach; once there, only
        // adjusting the pose can
        if let Some(mv) = d.actions.iter_mut().find(|a| a.name == "move" && a.params.len() == 1) {
            let v = mv.params[0].name.clone();
            add_conjunct(&mut mv.precondition, Formula::Not(Box::new(var_atom("at", &[&v]))));
            add_conjunct(&mut mv.effect, var_atom("reachable", &[&v]));
        }
        if let Some(adj) = d.actions.iter_mut().find(|a| a.name == "adjust" && a.params.len() == 1) {
            let v = adj.params[0].name.clone();
            add_conjunct(&mut adj.precondition, var_atom("at", &[&v]));
            add_conjunct(&mut adj.effect, var_atom("reachable", &[&v]));
        }
    }
    if has("graspable") && has("in") {
        if let Some(pull) = d.actions.iter_mut().find(|a| a.name == "pull" && a.params.len() == 1) {
            let c = pull.params[0].name.clone();
            let ty = pull.params[0].ty.clone();
            let x = format!("{c}_content");
            pull.params.push(TypedName::new(x.clone(), ty));
            add_conjunct(&mut pull.precondition, var_atom("in", &[&x, &c]));
            add_conjunct(&mut pull.effect, var_atom("graspable", &[&x]));
        }
        // relaxed graspable stands for "not shut away", which scanning needs too
        if let Some(scan) = d.actions.iter_mut().find(|a| a.name == "scan" && a.params.len() == 1) {
            let v = scan.params[0].name.clone();
            add_conjunct(&mut scan.precondition, var_atom("graspable", &[&v]));
        }
        if let Some(adj) = d.actions.iter_mut().find(|a| a.name == "adjust" && a.params.len() == 1) {
            let v = adj.params[0].name.clone();
            add_conjunct(&mut adj.precondition, var_atom("graspable", &[&v]));
        }
    }
    d
}

/// Real action for a step of the relaxed plan.
fn unrelax(a: &GroundAction) -> GroundAction {
    if a.schema == "pull" && a.args.len() == 2 {
        GroundAction::new("pull", [a.args[0].clone()])
    } else {
        a.clone()
    }
}

fn placements(init: &State, obj: &str) -> Vec<GroundAtom> {
    init.iter()
        .filter(|a| {
            matches!(a.predicate.as_str(), "on" | "in" | "holding") && a.args.first().is_some_and(|x| x == obj)
        })
        .cloned()
        .collect()
}

/// Drops goal atoms the observation contradicts, such as an object seen
/// both on the target and still in the gripper, and goal placements that
/// the last action could not have produced.
fn sanitize(init: &State, goal: &Formula, last: Option<&GroundAction>) -> State {
    let mut out = init.clone();
    for atom in goal.atoms() {
        let Some(g) = ground(atom) else { continue };
        if !matches!(g.predicate.as_str(), "on" | "in" | "holding") || !init.contains(&g) {
            continue;
        }
        let placed_by_last = last.is_some_and(|a| matches!(a.schema.as_str(), "place" | "insert") && a.args == g.args);
        if placements(init, &g.args[0]).len() > 1 || (g.predicate != "holding" && !placed_by_last) {
            out.remove(&g);
        }
    }
    out
}

fn ground(a: &Atom) -> Option<GroundAtom> {
    let args: Option<Vec<String>> = a
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Some(c.clone()),
            Term::Var(_) => None,
        })
        .collect();
    Some(GroundAtom::new(a.predicate.clone(), args?))
}

fn enclosed(init: &State, obj: &str) -> bool {
    init.iter().any(|a| {
        a.predicate == "in" && a.args.len() == 2 && a.args[0] == obj && !init.contains(&GroundAtom::new("opened", [a.args[1].as_str()]))
    })
}

fn relaxed_init(domain: &DomainModel, problem: &ProblemModel, init: &State) -> State {
    let mut s = init.clone();
    for o in problem.object_names() {
        for p in ["find", "placeable"] {
            if domain.predicate(p).is_some() {
                s.insert(GroundAtom::new(p, [o]));
            }
        }
        if domain.predicate("graspable").is_some() && !enclosed(init, o) {
            s.insert(GroundAtom::new("graspable", [o]));
        }
    }
    s
}

fn positive_atoms(f: &Formula, out: &mut Vec<GroundAtom>) {
    match f {
        Formula::Atom(a) => out.extend(ground(a)),
        Formula::And(cs) => cs.iter().for_each(|c| positive_atoms(c, out)),
        Formula::Or(_) | Formula::Not(_) => {}
    }
}

/// Conjunctive positive precondition atoms missing from `state`.
fn missing(domain: &DomainModel, a: &GroundAction, state: &State) -> Vec<GroundAtom> {
    let Ok(g) = instantiate(domain, a) else {
        return Vec::new();
    };
    let mut atoms = Vec::new();
    positive_atoms(&g.precondition, &mut atoms);
    atoms.retain(|x| !state.contains(x));
    atoms
}

fn is_applicable(domain: &DomainModel, a: &GroundAction, state: &State) -> bool {
    applicable(domain, a, state).unwrap_or(false)
}

/// Up to `k` distinct actions, best first.
///
/// The first entry is the policy's choice. The rest are ordered by whether
/// they reach the goal, whether their preconditions hold, and how early in
/// the optimistic plan they are useful.
pub fn rank_actions(
    domain: &DomainModel,
    problem: &ProblemModel,
    last_action: Option<&GroundAction>,
    k: usize,
) -> Vec<GroundAction> {
    if k == 0 {
        return Vec::new();
    }
    let init = sanitize(&problem.init, &problem.goal, last_action);
    let stop = GroundAction::new("stop", Vec::<String>::new());
    let alert = GroundAction::new("alert", Vec::<String>::new());

    let relaxed = relaxed_domain(domain);
    let mut relaxed_problem = problem.clone();
    relaxed_problem.init = relaxed_init(domain, problem, &init);
    let plan: Option<Vec<GroundAction>> = if holds(&problem.goal, &init).unwrap_or(false) {
        Some(Vec::new())
    } else {
        forward_search(&relaxed, &relaxed_problem, SEARCH_BUDGET)
            .ok()
            .and_then(|o| o.plan().map(|p| p.iter().map(unrelax).collect()))
    };

    let primary = match plan.as_deref() {
        Some([]) => stop.clone(),
        Some([next, ..]) if is_applicable(domain, next, &init) => next.clone(),
        Some([next, ..]) => {
            let gaps = missing(domain, next, &init);
            match gaps.first() {
                Some(first) if gaps.iter().all(|g| ADJUSTABLE.contains(&g.predicate.as_str())) => {
                    let adjust = GroundAction::new("adjust", first.args.clone());
                    if is_applicable(domain, &adjust, &init) {
                        adjust
                    } else {
                        alert.clone()
                    }
                }
                _ => alert.clone(),
            }
        }
        None => alert.clone(),
    };

    // atoms each plan step still needs, for crediting partial progress
    let steps = plan.unwrap_or_default();
    let needed: Vec<BTreeSet<GroundAtom>> =
        steps.iter().map(|a| missing(domain, a, &init).into_iter().collect()).collect();
    let goal_gaps: BTreeSet<GroundAtom> =
        problem.goal.atoms().into_iter().filter_map(ground).filter(|x| !init.contains(x)).collect();

    let progress = |a: &GroundAction| -> usize {
        if let Some(j) = steps.iter().position(|s| s == a) {
            return 2 * j;
        }
        let Ok(g) = instantiate(domain, a) else {
            return usize::MAX;
        };
        let adds: Vec<GroundAtom> = g.add.iter().filter(|x| !init.contains(x)).cloned().collect();
        if let Some(j) = needed.iter().position(|n| adds.iter().any(|x| n.contains(x))) {
            return 2 * j + 1;
        }
        if adds.iter().any(|x| goal_gaps.contains(x)) {
            return 2 * steps.len() + 1;
        }
        usize::MAX
    };

    let mut others: Vec<(bool, bool, usize, usize, GroundAction)> = ground_actions(domain, &problem.objects)
        .into_iter()
        .enumerate()
        .filter(|(_, a)| !a.is_recovery() && *a != primary)
        .map(|(i, a)| {
            let app = is_applicable(domain, &a, &init);
            let reaches_goal = app
                && instantiate(domain, &a)
                    .map(|g| holds(&problem.goal, &g.apply_unchecked(&init)).unwrap_or(false))
                    .unwrap_or(false);
            (!reaches_goal, !app, progress(&a), i, a)
        })
        .collect();
    others.sort_by_key(|x| (x.0, x.1, x.2, x.3));

    std::iter::once(primary)
        .chain(others.into_iter().map(|t| t.4))
        .take(k)
        .collect()
}
