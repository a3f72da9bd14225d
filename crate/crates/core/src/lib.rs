//! Closed-loop task planning over a PDDL room domain.

pub mod augment;
pub mod geometry;
pub mod grounding;
pub mod oracle;
pub mod pddl;
pub mod planner;
pub mod worldsim;
