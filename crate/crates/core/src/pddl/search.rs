use std::collections::{HashSet, VecDeque};

use super::eval::{ground_actions, holds, instantiate};
use super::{DomainModel, GroundAction, PddlError, ProblemModel, State};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Plan(Vec<GroundAction>),
    /// The reachable state space was exhausted without meeting the goal.
    Unsolvable,
    BudgetExhausted,
}

impl SearchOutcome {
    pub fn plan(&self) -> Option<&[GroundAction]> {
        match self {
            SearchOutcome::Plan(p) => Some(p),
            _ => None,
        }
    }
}

struct Node {
    state: State,
    parent: usize,
    action: Option<usize>,
}

/// Breadth-first search from the problem's init state.
///
/// `budget` bounds the number of expanded states. Successors are generated
/// in [`ground_actions`] order, which fixes the plan returned among several
/// shortest ones.
pub fn forward_search(domain: &DomainModel, problem: &ProblemModel, budget: usize) -> Result<SearchOutcome, PddlError> {
    if budget == 0 {
        return Err(PddlError::ZeroBudget);
    }
    if holds(&problem.goal, &problem.init)? {
        return Ok(SearchOutcome::Plan(Vec::new()));
    }
    let actions = ground_actions(domain, &problem.objects)
        .iter()
        .map(|a| instantiate(domain, a))
        .collect::<Result<Vec<_>, _>>()?;

    let mut nodes = vec![Node {
        state: problem.init.clone(),
        parent: 0,
        action: None,
    }];
    let mut seen: HashSet<State> = HashSet::from([problem.init.clone()]);
    let mut frontier = VecDeque::from([0usize]);
    let mut expanded = 0;

    while let Some(id) = frontier.pop_front() {
        if expanded == budget {
            return Ok(SearchOutcome::BudgetExhausted);
        }
        expanded += 1;
        for (ai, a) in actions.iter().enumerate() {
            if !a.applicable(&nodes[id].state)? {
                continue;
            }
            let next = a.apply_unchecked(&nodes[id].state);
            if seen.contains(&next) {
                continue;
            }
            let goal = holds(&problem.goal, &next)?;
            seen.insert(next.clone());
            nodes.push(Node {
                state: next,
                parent: id,
                action: Some(ai),
            });
            let child = nodes.len() - 1;
            if goal {
                return Ok(SearchOutcome::Plan(extract(&nodes, child, &actions)));
            }
            frontier.push_back(child);
        }
    }
    Ok(SearchOutcome::Unsolvable)
}

fn extract(nodes: &[Node], mut id: usize, actions: &[super::GroundedAction]) -> Vec<GroundAction> {
    let mut plan = Vec::new();
    while let Some(ai) = nodes[id].action {
        plan.push(actions[ai].action.clone());
        id = nodes[id].parent;
    }
    plan.reverse();
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{canonical_domain, parse_problem};

    #[test]
    fn satisfied_goal_gives_empty_plan() {
        let d = canonical_domain();
        let p = parse_problem(
            "(define (problem p) (:domain room) (:objects a - locatable) (:init (holding a)) (:goal (holding a)))",
            &d,
        )
        .unwrap();
        assert_eq!(forward_search(&d, &p, 10).unwrap(), SearchOutcome::Plan(vec![]));
        assert_eq!(forward_search(&d, &p, 0), Err(PddlError::ZeroBudget));
    }

    #[test]
    fn budget_distinct_from_unsolvable() {
        let d = canonical_domain();
        let p = parse_problem(
            "(define (problem p) (:domain room) (:objects a b - locatable) (:init (find a) (find b)) (:goal (holding a)))",
            &d,
        )
        .unwrap();
        assert_eq!(forward_search(&d, &p, 1).unwrap(), SearchOutcome::BudgetExhausted);
        assert_eq!(forward_search(&d, &p, 1000).unwrap(), SearchOutcome::Unsolvable);
    }
}
