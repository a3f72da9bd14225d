use std::collections::HashMap;

use super::{ActionSchema, Atom, DomainModel, Formula, GroundAction, GroundAtom, PddlError, State, Term, TypedName};

/// Closed-world truth of a ground formula.
pub fn holds(f: &Formula, state: &State) -> Result<bool, PddlError> {
    Ok(match f {
        Formula::Atom(a) => state.contains(&ground(a)?),
        Formula::And(cs) => {
            // evaluate every child so free variables are always reported
            let mut all = true;
            for c in cs {
                all &= holds(c, state)?;
            }
            all
        }
        Formula::Or(cs) => {
            let mut any = false;
            for c in cs {
                any |= holds(c, state)?;
            }
            any
        }
        Formula::Not(c) => !holds(c, state)?,
    })
}

fn ground(a: &Atom) -> Result<GroundAtom, PddlError> {
    let args = a
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Ok(c.clone()),
            Term::Var(v) => Err(PddlError::FreeVariable(v.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroundAtom {
        predicate: a.predicate.clone(),
        args,
    })
}

fn substitute(f: &Formula, binding: &HashMap<&str, &str>) -> Formula {
    match f {
        Formula::Atom(a) => Formula::Atom(Atom {
            predicate: a.predicate.clone(),
            args: a
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => match binding.get(v.as_str()) {
                        Some(o) => Term::Const((*o).to_string()),
                        None => t.clone(),
                    },
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        }),
        Formula::And(cs) => Formula::And(cs.iter().map(|c| substitute(c, binding)).collect()),
        Formula::Or(cs) => Formula::Or(cs.iter().map(|c| substitute(c, binding)).collect()),
        Formula::Not(c) => Formula::Not(Box::new(substitute(c, binding))),
    }
}

/// A ground action with its precondition and effect lists bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedAction {
    pub action: GroundAction,
    pub precondition: Formula,
    pub add: Vec<GroundAtom>,
    pub del: Vec<GroundAtom>,
}

impl GroundedAction {
    pub fn applicable(&self, state: &State) -> Result<bool, PddlError> {
        holds(&self.precondition, state)
    }

    /// Deletes first, then adds, so an atom both added and deleted ends up true.
    pub fn apply_unchecked(&self, state: &State) -> State {
        let mut next = state.clone();
        for d in &self.del {
            next.remove(d);
        }
        next.extend(self.add.iter().cloned());
        next
    }
}

fn schema_for<'d>(domain: &'d DomainModel, a: &GroundAction) -> Result<&'d ActionSchema, PddlError> {
    let schema = domain
        .action(&a.schema)
        .ok_or_else(|| PddlError::UnknownAction(a.schema.clone()))?;
    if schema.params.len() != a.args.len() {
        return Err(PddlError::ActionArity {
            name: a.schema.clone(),
            expected: schema.params.len(),
            got: a.args.len(),
        });
    }
    Ok(schema)
}

/// Binds a schema's parameters to the action's arguments.
pub fn instantiate(domain: &DomainModel, a: &GroundAction) -> Result<GroundedAction, PddlError> {
    let schema = schema_for(domain, a)?;
    let binding: HashMap<&str, &str> = schema
        .params
        .iter()
        .zip(&a.args)
        .map(|(p, o)| (p.name.as_str(), o.as_str()))
        .collect();
    let precondition = substitute(&schema.precondition, &binding);
    let effect = substitute(&schema.effect, &binding);
    let (add, del) = effect
        .literals()
        .ok_or_else(|| PddlError::semantic(0, 0, format!("effect of `{}` is not STRIPS", schema.name)))?;
    let add = add.into_iter().map(ground).collect::<Result<Vec<_>, _>>()?;
    let del = del.into_iter().map(ground).collect::<Result<Vec<_>, _>>()?;
    Ok(GroundedAction {
        action: a.clone(),
        precondition,
        add,
        del,
    })
}

pub fn applicable(domain: &DomainModel, a: &GroundAction, state: &State) -> Result<bool, PddlError> {
    instantiate(domain, a)?.applicable(state)
}

/// Successor state; an error if the action's precondition does not hold.
pub fn apply(domain: &DomainModel, a: &GroundAction, state: &State) -> Result<State, PddlError> {
    let g = instantiate(domain, a)?;
    if !g.applicable(state)? {
        return Err(PddlError::Inapplicable(a.to_string()));
    }
    Ok(g.apply_unchecked(state))
}

/// Every type-consistent binding of every schema.
///
/// Ordered by the positions of the arguments in `objects`, then by schema
/// declaration order, so results follow the problem's object listing.
pub fn ground_actions(domain: &DomainModel, objects: &[TypedName]) -> Vec<GroundAction> {
    let mut keyed: Vec<(Vec<usize>, usize, GroundAction)> = Vec::new();
    for (si, schema) in domain.actions.iter().enumerate() {
        let choices: Vec<Vec<usize>> = schema
            .params
            .iter()
            .map(|p| {
                objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| domain.is_subtype(&o.ty, &p.ty))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut bindings: Vec<Vec<usize>> = vec![Vec::new()];
        for c in &choices {
            bindings = bindings
                .into_iter()
                .flat_map(|b| {
                    c.iter().map(move |&i| {
                        let mut next = b.clone();
                        next.push(i);
                        next
                    })
                })
                .collect();
        }
        for picked in bindings {
            let args = picked.iter().map(|&i| objects[i].name.clone());
            let action = GroundAction::new(schema.name.clone(), args);
            keyed.push((picked, si, action));
        }
    }
    keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    keyed.into_iter().map(|(_, _, a)| a).collect()
}
