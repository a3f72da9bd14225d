use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{floor_footprint_clear, inside_room, observe, WorldState, HEAD_HEIGHT, REACH_RADIUS};
use crate::geometry::{Pose2, Vec3};
use crate::grounding;
use crate::pddl::GroundAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    PreconditionViolated,
    StochasticFailure,
    PathBlocked,
    Unreachable,
    NothingHeld,
    BadTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub reward: u8,
    pub failure_reason: Option<FailureReason>,
}

impl ActionOutcome {
    pub fn success() -> Self {
        Self {
            reward: 1,
            failure_reason: None,
        }
    }

    pub fn failure(reason: FailureReason) -> Self {
        Self {
            reward: 0,
            failure_reason: Some(reason),
        }
    }

    pub fn is_success(&self) -> bool {
        self.reward == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionCategory {
    Navigation,
    Manipulation,
    /// Recovery and terminal actions; never fail at random.
    Passive,
}

pub fn category(schema: &str) -> ActionCategory {
    match schema {
        "move" => ActionCategory::Navigation,
        "adjust" | "alert" | "stop" => ActionCategory::Passive,
        _ => ActionCategory::Manipulation,
    }
}

fn arity(schema: &str) -> Option<usize> {
    Some(match schema {
        "move" | "scan" | "grasp" | "pull" | "push" | "lift" | "rotate" | "reach" | "adjust" => 1,
        "place" | "insert" => 2,
        "alert" | "stop" => 0,
        _ => return None,
    })
}

const LIFT_STEP: f64 = 0.1;
const ADJUST_STEP: f64 = 0.2;
/// `move` stops once the base is this close to the target center.
const NAV_STANDOFF: f64 = 0.8;
/// `adjust` only steps the base when farther than this from the target.
const ADJUST_STANDOFF: f64 = 0.6;

type Physical = Result<WorldState, FailureReason>;

/// Runs one primitive. Physical validity is checked first; a valid action
/// then fails at random with its category's probability. Failed actions
/// leave the world unchanged apart from the step counter.
pub fn execute(s: &WorldState, a: &GroundAction, rng: &mut impl Rng) -> (WorldState, ActionOutcome) {
    let mut before = s.clone();
    before.time_step += 1;
    let physical = check_and_apply(&before, a);
    match physical {
        Err(reason) => (before, ActionOutcome::failure(reason)),
        Ok(after) => {
            let p = match category(&a.schema) {
                ActionCategory::Navigation => s.p_fail.navigation,
                ActionCategory::Manipulation => s.p_fail.manipulation,
                ActionCategory::Passive => 0.0,
            };
            // always draw so the stream position does not depend on p
            let roll: f64 = rng.gen();
            if roll < p {
                (before, ActionOutcome::failure(FailureReason::StochasticFailure))
            } else {
                (after, ActionOutcome::success())
            }
        }
    }
}

fn check_and_apply(s: &WorldState, a: &GroundAction) -> Physical {
    use FailureReason::*;
    if arity(&a.schema) != Some(a.args.len()) || a.args.iter().any(|id| !s.objects.contains_key(id)) {
        return Err(PreconditionViolated);
    }
    let arg = |i: usize| a.args[i].as_str();
    match a.schema.as_str() {
        "move" => do_move(s, arg(0)),
        "scan" => do_scan(s, arg(0)),
        "grasp" => do_grasp(s, arg(0)),
        "place" => do_place(s, arg(0), arg(1), false),
        "insert" => do_place(s, arg(0), arg(1), true),
        "pull" => do_toggle(s, arg(0), true),
        "push" => do_toggle(s, arg(0), false),
        "lift" => {
            require_held(s, arg(0))?;
            let mut next = s.clone();
            next.robot.lift += LIFT_STEP;
            next.sync_held();
            Ok(next)
        }
        "rotate" => {
            require_held(s, arg(0))?;
            let mut next = s.clone();
            let o = next.objects.get_mut(arg(0)).expect("checked");
            std::mem::swap(&mut o.bbox.x, &mut o.bbox.y);
            Ok(next)
        }
        "reach" => {
            within_reach(s, arg(0))?;
            if !grounding::eval_reachable(s, grounding::default_reachability(), arg(0)) {
                return Err(Unreachable);
            }
            Ok(s.clone())
        }
        "adjust" => Ok(do_adjust(s, arg(0))),
        _ => Ok(s.clone()),
    }
}

fn require_held(s: &WorldState, id: &str) -> Result<(), FailureReason> {
    match s.robot.held.as_deref() {
        None => Err(FailureReason::NothingHeld),
        Some(h) if h != id => Err(FailureReason::PreconditionViolated),
        Some(_) => Ok(()),
    }
}

fn within_reach(s: &WorldState, id: &str) -> Result<(), FailureReason> {
    match s.distance_to(id) {
        Some(d) if d <= REACH_RADIUS => Ok(()),
        _ => Err(FailureReason::Unreachable),
    }
}

fn face(s: &mut WorldState, target: Vec3) {
    let pose = s.robot.base_pose;
    if target.dist_xy(pose.position()) > 1e-9 {
        s.robot.base_pose.heading = pose.heading_to(target);
    }
    let horizontal = target.dist_xy(pose.position()).max(1e-6);
    s.robot.head_tilt = (target.z - HEAD_HEIGHT).atan2(horizontal);
    s.sync_held();
}

fn do_move(s: &WorldState, id: &str) -> Physical {
    if s.robot.held.as_deref() == Some(id) {
        return Err(FailureReason::BadTarget);
    }
    let target = s.objects[id].position;
    let map = grounding::occupancy_map(s);
    let plan = grounding::plan_path(&map, s.robot.base_pose.position(), target).ok_or(FailureReason::PathBlocked)?;
    let mut next = s.clone();
    if plan.cells.len() > 1 {
        // stop at the first cell inside the standoff, else at the path end
        let end = plan
            .cells
            .iter()
            .skip(1)
            .map(|c| map.column_center(*c))
            .find(|p| p.dist_xy(target) <= NAV_STANDOFF)
            .unwrap_or_else(|| map.column_center(*plan.cells.last().expect("non-empty plan")));
        next.robot.base_pose.x = end.x;
        next.robot.base_pose.y = end.y;
    }
    face(&mut next, target);
    next.robot.head_tilt = 0.0;
    Ok(next)
}

fn do_scan(s: &WorldState, id: &str) -> Physical {
    if s.is_enclosed(id) {
        return Err(FailureReason::BadTarget);
    }
    let target = s.objects[id].position;
    if (target - s.robot.head()).norm() > s.robot.fov_range {
        return Err(FailureReason::Unreachable);
    }
    let mut next = s.clone();
    if s.robot.held.as_deref() != Some(id) {
        face(&mut next, target);
    }
    if !observe(&next).iter().any(|r| r.object_id == id) {
        return Err(FailureReason::BadTarget);
    }
    Ok(next)
}

fn do_grasp(s: &WorldState, id: &str) -> Physical {
    use FailureReason::*;
    if s.robot.held.is_some() {
        return Err(PreconditionViolated);
    }
    if s.is_enclosed(id) || !s.objects[id].movable {
        return Err(BadTarget);
    }
    within_reach(s, id)?;
    if !observe(s).iter().any(|r| r.object_id == id) {
        return Err(PreconditionViolated);
    }
    if !grounding::eval_graspable(s, id) {
        return Err(BadTarget);
    }
    if !grounding::eval_reachable(s, grounding::default_reachability(), id) {
        return Err(Unreachable);
    }
    // nothing may rest on the object being lifted
    if s.objects.values().any(|o| o.supported_by.as_deref() == Some(id)) {
        return Err(BadTarget);
    }
    let mut next = s.clone();
    let o = next.objects.get_mut(id).expect("checked");
    o.supported_by = None;
    o.contained_in = None;
    next.robot.held = Some(id.to_string());
    next.robot.lift = 0.0;
    next.sync_held();
    Ok(next)
}

fn do_place(s: &WorldState, obj: &str, target: &str, insert: bool) -> Physical {
    use FailureReason::*;
    require_held(s, obj)?;
    let t = &s.objects[target];
    if obj == target || !t.surface || (insert && !t.shelf) {
        return Err(BadTarget);
    }
    within_reach(s, target)?;
    if !grounding::eval_reachable(s, grounding::default_reachability(), target) {
        return Err(Unreachable);
    }
    let point = grounding::place_point(s, target).map_err(|_| BadTarget)?;
    let mut next = s.clone();
    let o = next.objects.get_mut(obj).expect("checked");
    o.position = point;
    o.supported_by = Some(target.to_string());
    next.robot.held = None;
    next.robot.lift = 0.0;
    Ok(next)
}

fn do_toggle(s: &WorldState, id: &str, open: bool) -> Physical {
    use FailureReason::*;
    let o = &s.objects[id];
    if !o.container {
        return Err(BadTarget);
    }
    if o.opened == open || s.robot.held.is_some() {
        return Err(PreconditionViolated);
    }
    within_reach(s, id)?;
    if !grounding::eval_graspable(s, id) || !grounding::eval_reachable(s, grounding::default_reachability(), id) {
        return Err(Unreachable);
    }
    let mut next = s.clone();
    next.objects.get_mut(id).expect("checked").opened = open;
    Ok(next)
}

/// Re-aims at the target and, when far, steps toward it in the best free
/// one of eight directions.
fn do_adjust(s: &WorldState, id: &str) -> WorldState {
    let mut next = s.clone();
    if s.robot.held.as_deref() == Some(id) {
        return next;
    }
    let target = s.objects[id].position;
    let pose = s.robot.base_pose;
    let current = target.dist_xy(pose.position());
    if current > ADJUST_STANDOFF {
        let mut others = s.objects.clone();
        if let Some(h) = &s.robot.held {
            others.remove(h);
        }
        let mut best: Option<(f64, f64, f64)> = None;
        for k in 0..8 {
            let ang = k as f64 * std::f64::consts::FRAC_PI_4;
            let x = pose.x + ADJUST_STEP * ang.cos();
            let y = pose.y + ADJUST_STEP * ang.sin();
            if !inside_room(&s.room, x, y) || !floor_footprint_clear(&others, x, y, 0.1) {
                continue;
            }
            let d = target.dist_xy(Vec3::new(x, y, 0.0));
            if d < current - 1e-9 && best.is_none_or(|b| d < b.0) {
                best = Some((d, x, y));
            }
        }
        if let Some((_, x, y)) = best {
            next.robot.base_pose = Pose2 { x, y, ..pose };
        }
    }
    face(&mut next, target);
    next
}
