//! Geometric evaluation of the grounded predicates: `find`, `at`,
//! `detected`, `graspable`, `reachable` and `placeable`.

mod astar;
mod embed;
mod manip;
mod reach;
mod voxel;

use thiserror::Error;

use crate::pddl::GroundAtom;
use crate::worldsim::{WorldState, AT_RADIUS};

pub use astar::{plan_path, OccupancyGrid, PathCost, PathPlan};
pub use embed::{embed_text, Embedding, EMBED_DIM};
pub use manip::{
    eval_detected, eval_graspable, eval_placeable, eval_reachable, generate_grasps, place_point, GraspCandidate,
    SURFACE_CELL,
};
pub use reach::{build_reachability, default_reachability, ArmSpec, ReachabilityMap, REACH_RESOLUTION, THETA_REACH};
pub use voxel::{
    build_map, locate, occupancy_map, survey, Located, MapBounds, SemanticVoxelMap, VoxelCell, MAP_RESOLUTION,
    TAU_LOC,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("label is empty")]
    EmptyLabel,
    #[error("scan of `{0}` lies outside the map bounds")]
    OutOfBounds(String),
    #[error("map bounds are invalid")]
    InvalidBounds,
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),
    #[error("`{0}` has no free area for the held object")]
    NotPlaceable(String),
    #[error("map file: {0}")]
    MapFile(String),
    #[error("`{0}` is not a grounded predicate")]
    NotGrounded(String),
}

/// A path exists from the robot to wherever the map places `query`.
pub fn eval_find(s: &WorldState, map: &SemanticVoxelMap, query: &str) -> bool {
    locate(map, query).is_some_and(|hit| plan_path(map, s.robot.base_pose.position(), hit.position).is_some())
}

/// The robot base is within [`AT_RADIUS`] of the located object.
pub fn eval_at(s: &WorldState, map: &SemanticVoxelMap, query: &str) -> bool {
    locate(map, query).is_some_and(|hit| hit.position.dist_xy(s.robot.base_pose.position()) <= AT_RADIUS)
}

/// Prebuilt scene map plus the arm workspace, for answering grounded atoms.
#[derive(Debug, Clone)]
pub struct Grounder {
    pub map: SemanticVoxelMap,
    pub reach: &'static ReachabilityMap,
}

impl Grounder {
    /// Surveys the initial state into a static map.
    pub fn for_world(s: &WorldState) -> Self {
        Self {
            map: occupancy_map(s),
            reach: default_reachability(),
        }
    }

    pub fn evaluate(&self, s: &WorldState, atom: &GroundAtom) -> Result<bool, GroundingError> {
        let arg = atom.args.first().map(String::as_str).unwrap_or_default();
        if atom.args.len() != 1 {
            return Err(GroundingError::NotGrounded(atom.to_string()));
        }
        let known = |id: &str| {
            if s.objects.contains_key(id) {
                Ok(())
            } else {
                Err(GroundingError::UnknownObject(id.to_string()))
            }
        };
        Ok(match atom.predicate.as_str() {
            "find" => eval_find(s, &self.map, arg),
            "at" => eval_at(s, &self.map, arg),
            "detected" => {
                known(arg)?;
                eval_detected(s, arg)
            }
            "graspable" => {
                known(arg)?;
                eval_graspable(s, arg)
            }
            "reachable" => {
                known(arg)?;
                eval_reachable(s, self.reach, arg)
            }
            "placeable" => {
                known(arg)?;
                eval_placeable(s, arg)
            }
            _ => return Err(GroundingError::NotGrounded(atom.to_string())),
        })
    }
}
