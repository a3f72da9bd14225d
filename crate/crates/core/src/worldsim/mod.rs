//! Seedable simulated room for the five manipulation tasks.
//!
//! The simulator holds ground truth: object poses, support and containment,
//! container state and the robot. Actions are checked against geometry, not
//! against symbols.

mod exec;
mod scene;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Aabb, Pose2, Vec3};
use crate::pddl::{holds, Formula, GroundAtom, State};

pub use exec::{category, execute, ActionCategory, ActionOutcome, FailureReason};
pub use scene::{FailureRates, Jitter, ObjectSpec, RoomSpec, SceneSpec, StartPose, CANONICAL_SCENES};

/// Distance from base to object centroid within which the arm may act.
pub const REACH_RADIUS: f64 = 0.9;
/// Distance from base to object within which `at` holds.
pub const AT_RADIUS: f64 = 0.9;
pub const HEAD_HEIGHT: f64 = 1.3;
pub const FOV_HALF_ANGLE: f64 = 0.6;
pub const FOV_RANGE: f64 = 3.0;
/// Clearance kept between the robot center and any footprint at load time.
const START_CLEARANCE: f64 = 0.15;
/// Tolerance for support contact and containment.
const CONTACT_TOL: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("objects `{0}` and `{1}` overlap")]
    Overlap(String, String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Centroid.
    pub position: Vec3,
    /// Full extents along x, y, z.
    pub bbox: Vec3,
    pub supported_by: Option<String>,
    pub contained_in: Option<String>,
    pub opened: bool,
    pub container: bool,
    pub surface: bool,
    pub shelf: bool,
    pub movable: bool,
}

impl ObjectRecord {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.position, self.bbox)
    }

    pub fn top(&self) -> f64 {
        self.position.z + self.bbox.z / 2.0
    }

    /// Whether `name` (an id, label or alias, any case, `_` or space) names this object.
    pub fn answers_to(&self, name: &str) -> bool {
        let n = normalize_name(name);
        n == normalize_name(&self.id)
            || n == normalize_name(&self.label)
            || self.aliases.iter().any(|a| normalize_name(a) == n)
    }
}

/// Lowercase, `_` as space, single spaces.
pub fn normalize_name(s: &str) -> String {
    s.replace('_', " ")
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub base_pose: Pose2,
    /// Pitch of the head camera; negative looks down.
    pub head_tilt: f64,
    pub held: Option<String>,
    /// Extra height of the held object from `lift`.
    pub lift: f64,
    pub fov_half_angle: f64,
    pub fov_range: f64,
}

impl RobotRecord {
    pub fn head(&self) -> Vec3 {
        Vec3::new(self.base_pose.x, self.base_pose.y, HEAD_HEIGHT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene: String,
    pub room: RoomSpec,
    pub objects: BTreeMap<String, ObjectRecord>,
    pub robot: RobotRecord,
    pub time_step: u64,
    pub p_fail: FailureRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub object_id: String,
    pub label: String,
    pub centroid: Vec3,
    pub bbox: Vec3,
}

impl ScanRecord {
    pub fn of(o: &ObjectRecord) -> Self {
        Self {
            object_id: o.id.clone(),
            label: o.label.clone(),
            centroid: o.position,
            bbox: o.bbox,
        }
    }
}

impl WorldState {
    pub fn object(&self, id: &str) -> Result<&ObjectRecord, WorldError> {
        self.objects.get(id).ok_or_else(|| WorldError::UnknownObject(id.to_string()))
    }

    /// Ids in a stable order.
    pub fn object_ids(&self) -> Vec<String> {
        self.objects.keys().cloned().collect()
    }

    /// True when `id` sits inside a container that is closed.
    pub fn is_enclosed(&self, id: &str) -> bool {
        self.objects
            .get(id)
            .and_then(|o| o.contained_in.as_ref())
            .and_then(|c| self.objects.get(c))
            .is_some_and(|c| !c.opened)
    }

    /// Horizontal distance from the robot base to an object's centroid.
    pub fn distance_to(&self, id: &str) -> Option<f64> {
        self.objects
            .get(id)
            .map(|o| o.position.dist_xy(self.robot.base_pose.position()))
    }

    /// Where a held object rides relative to the base.
    pub(crate) fn carry_position(&self) -> Vec3 {
        let p = self.robot.base_pose;
        let (s, c) = p.heading.sin_cos();
        Vec3::new(p.x + 0.35 * c, p.y + 0.35 * s, 0.9 + self.robot.lift)
    }

    pub(crate) fn sync_held(&mut self) {
        let carry = self.carry_position();
        if let Some(h) = self.robot.held.clone() {
            if let Some(o) = self.objects.get_mut(&h) {
                o.position = carry;
            }
        }
    }
}

fn floor_footprint_clear(objects: &BTreeMap<String, ObjectRecord>, x: f64, y: f64, margin: f64) -> bool {
    objects.values().all(|o| {
        let lo = o.aabb().min();
        let hi = o.aabb().max();
        x < lo.x - margin || x > hi.x + margin || y < lo.y - margin || y > hi.y + margin
    })
}

/// Builds the initial state for a scene. The seed drives start-pose and
/// object-placement jitter; a zero jitter gives the nominal layout.
pub fn load_scene(spec: &SceneSpec) -> Result<WorldState, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut objects: BTreeMap<String, ObjectRecord> = BTreeMap::new();
    let room = spec.room;
    if room.width <= 0.0 || room.depth <= 0.0 || room.height <= 0.0 {
        return Err(WorldError::InvalidScene("room extents must be positive".into()));
    }

    for o in &spec.objects {
        if objects.contains_key(&o.id) {
            return Err(WorldError::InvalidScene(format!("duplicate object id `{}`", o.id)));
        }
        if o.size.iter().any(|&s| s <= 0.0) {
            return Err(WorldError::InvalidScene(format!("`{}` has a non-positive size", o.id)));
        }
        let size = Vec3::new(o.size[0], o.size[1], o.size[2]);
        let placements = [o.position.is_some(), o.on.is_some(), o.inside.is_some()];
        if placements.iter().filter(|&&p| p).count() != 1 {
            return Err(WorldError::InvalidScene(format!(
                "`{}` needs exactly one of position, on, in",
                o.id
            )));
        }
        let offset = |i: usize| o.offset.get(i).copied().unwrap_or(0.0);
        let mut jitter = |limit: f64| {
            if spec.jitter.objects > 0.0 && limit > 0.0 {
                rng.gen_range(-limit..=limit)
            } else {
                0.0
            }
        };
        let (position, supported_by, contained_in) = if let Some([x, y]) = o.position {
            (Vec3::new(x, y, size.z / 2.0), None, None)
        } else if let Some(sup) = &o.on {
            let s = objects
                .get(sup)
                .ok_or_else(|| WorldError::InvalidScene(format!("`{}` rests on undeclared `{sup}`", o.id)))?;
            let slack_x = ((s.bbox.x - size.x) / 2.0 - offset(0).abs()).max(0.0);
            let slack_y = ((s.bbox.y - size.y) / 2.0 - offset(1).abs()).max(0.0);
            let jx = jitter(spec.jitter.objects.min(slack_x));
            let jy = jitter(spec.jitter.objects.min(slack_y));
            let p = Vec3::new(
                s.position.x + offset(0) + jx,
                s.position.y + offset(1) + jy,
                s.top() + size.z / 2.0,
            );
            (p, Some(sup.clone()), None)
        } else {
            let cont = o.inside.as_ref().expect("checked above");
            let c = objects
                .get(cont)
                .ok_or_else(|| WorldError::InvalidScene(format!("`{}` is in undeclared `{cont}`", o.id)))?;
            if !c.container {
                return Err(WorldError::InvalidScene(format!("`{cont}` is not a container")));
            }
            let slack = ((c.bbox.x - size.x) / 2.0 - offset(0).abs()).max(0.0) / 2.0;
            let p = c.position + Vec3::new(offset(0) + jitter(spec.jitter.objects.min(slack)), offset(1), offset(2));
            (p, None, Some(cont.clone()))
        };
        let record = ObjectRecord {
            id: o.id.clone(),
            label: o.label.clone(),
            aliases: o.aliases.clone(),
            position,
            bbox: size,
            supported_by,
            contained_in,
            opened: o.opened && o.container,
            container: o.container,
            surface: o.surface,
            shelf: o.shelf,
            movable: o.movable,
        };
        objects.insert(o.id.clone(), record);
    }

    validate_layout(&objects, &room)?;

    let nominal = spec.robot;
    let mut pose = Pose2 {
        x: nominal.x,
        y: nominal.y,
        heading: wrap_angle(nominal.heading),
    };
    if spec.jitter.robot > 0.0 {
        let mut placed = false;
        for _ in 0..100 {
            let x = nominal.x + rng.gen_range(-spec.jitter.robot..=spec.jitter.robot);
            let y = nominal.y + rng.gen_range(-spec.jitter.robot..=spec.jitter.robot);
            let heading = rng.gen_range(-PI..PI);
            if inside_room(&room, x, y) && floor_footprint_clear(&objects, x, y, START_CLEARANCE) {
                pose = Pose2 { x, y, heading };
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::InvalidScene("no free robot start pose".into()));
        }
    }
    if !inside_room(&room, pose.x, pose.y) || !floor_footprint_clear(&objects, pose.x, pose.y, START_CLEARANCE) {
        return Err(WorldError::InvalidScene("robot start pose is blocked".into()));
    }

    Ok(WorldState {
        scene: spec.name.clone(),
        room,
        objects,
        robot: RobotRecord {
            base_pose: pose,
            head_tilt: 0.0,
            held: None,
            lift: 0.0,
            fov_half_angle: FOV_HALF_ANGLE,
            fov_range: FOV_RANGE,
        },
        time_step: 0,
        p_fail: spec.p_fail,
    })
}

fn inside_room(room: &RoomSpec, x: f64, y: f64) -> bool {
    let m = 0.2;
    x >= m && y >= m && x <= room.width - m && y <= room.depth - m
}

fn validate_layout(objects: &BTreeMap<String, ObjectRecord>, room: &RoomSpec) -> Result<(), WorldError> {
    let room_box = Aabb::new(
        Vec3::new(room.width / 2.0, room.depth / 2.0, room.height / 2.0),
        Vec3::new(room.width, room.depth, room.height),
    );
    for o in objects.values() {
        if !room_box.encloses(&o.aabb(), 1e-9) {
            return Err(WorldError::InvalidScene(format!("`{}` lies outside the room", o.id)));
        }
        if let Some(c) = &o.contained_in {
            if !objects[c].aabb().encloses(&o.aabb(), 1e-9) {
                return Err(WorldError::InvalidScene(format!("`{}` does not fit inside `{c}`", o.id)));
            }
        }
        if let Some(s) = &o.supported_by {
            let bottom = o.position.z - o.bbox.z / 2.0;
            if (bottom - objects[s].top()).abs() > CONTACT_TOL {
                return Err(WorldError::InvalidScene(format!("`{}` is not resting on `{s}`", o.id)));
            }
        }
    }
    let list: Vec<&ObjectRecord> = objects.values().collect();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            let nested = a.contained_in.as_deref() == Some(&b.id) || b.contained_in.as_deref() == Some(&a.id);
            if !nested && a.aabb().overlaps(&b.aabb(), 1e-6) {
                return Err(WorldError::Overlap(a.id.clone(), b.id.clone()));
            }
        }
    }
    Ok(())
}

/// Objects whose centroid is inside the head camera's cone and range.
/// Contents of closed containers are never reported.
pub fn observe(s: &WorldState) -> Vec<ScanRecord> {
    s.objects
        .values()
        .filter(|o| !s.is_enclosed(&o.id) && in_view(s, o.position))
        .map(ScanRecord::of)
        .collect()
}

pub(crate) fn in_view(s: &WorldState, p: Vec3) -> bool {
    let r = &s.robot;
    let v = p - r.head();
    let dist = v.norm();
    if r.fov_range <= 0.0 || dist > r.fov_range {
        return false;
    }
    if dist < 1e-9 {
        return true;
    }
    let (sh, ch) = r.base_pose.heading.sin_cos();
    let (st, ct) = r.head_tilt.sin_cos();
    let dir = Vec3::new(ch * ct, sh * ct, st);
    let cos = (dir.dot(v) / dist).clamp(-1.0, 1.0);
    cos.acos() <= r.fov_half_angle
}

/// Promptable-predicate truths over `ids`: support, containment, grip and
/// container state.
pub fn ground_truth_atoms(s: &WorldState, ids: &[String]) -> Result<State, WorldError> {
    let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut atoms = State::new();
    for id in ids {
        let o = s.object(id)?;
        if let Some(sup) = &o.supported_by {
            if set.contains(sup.as_str()) {
                atoms.insert(GroundAtom::new("on", [id.as_str(), sup.as_str()]));
            }
        }
        if let Some(c) = &o.contained_in {
            if set.contains(c.as_str()) {
                atoms.insert(GroundAtom::new("in", [id.as_str(), c.as_str()]));
            }
        }
        if s.robot.held.as_deref() == Some(id.as_str()) {
            atoms.insert(GroundAtom::new("holding", [id.as_str()]));
        }
        if o.container && o.opened {
            atoms.insert(GroundAtom::new("opened", [id.as_str()]));
        }
    }
    Ok(atoms)
}

/// Episode success test. Promptable atoms come from [`ground_truth_atoms`];
/// `at` is judged from the true base-to-object distance so that delivery
/// goals can be scored.
pub fn goal_satisfied(s: &WorldState, goal: &Formula) -> bool {
    let ids = s.object_ids();
    let Ok(mut atoms) = ground_truth_atoms(s, &ids) else {
        return false;
    };
    for id in &ids {
        if s.distance_to(id).is_some_and(|d| d <= AT_RADIUS) {
            atoms.insert(GroundAtom::new("at", [id.as_str()]));
        }
    }
    holds(goal, &atoms).unwrap_or(false)
}
