use serde::{Deserialize, Serialize};

use super::reach::{ReachabilityMap, THETA_REACH};
use super::GroundingError;
use crate::geometry::Vec3;
use crate::worldsim::{observe, WorldState};

/// Offset of the collision probe outside the grasp point, meters.
const PROBE: f64 = 0.02;
/// Cell size of the placement grid laid over a surface.
pub const SURFACE_CELL: f64 = 0.1;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub position: Vec3,
    /// Unit direction the gripper travels while closing in.
    pub approach: Vec3,
    pub score: f64,
    pub object_id: String,
}

/// Object is in view of the head camera.
pub fn eval_detected(s: &WorldState, id: &str) -> bool {
    observe(s).iter().any(|r| r.object_id == id)
}

/// Five poses on the box: from above, then the four side-face midpoints.
/// A pose is dropped if a point just outside it lies inside another object
/// or beyond the room walls. The open container holding the object does
/// not count as an obstacle.
pub fn generate_grasps(s: &WorldState, id: &str) -> Result<Vec<GraspCandidate>, GroundingError> {
    let o = s.objects.get(id).ok_or_else(|| GroundingError::UnknownObject(id.to_string()))?;
    if s.robot.held.as_deref() == Some(id) || s.is_enclosed(id) {
        return Ok(Vec::new());
    }
    let c = o.position;
    let h = o.bbox * 0.5;
    let poses = [
        (Vec3::new(c.x, c.y, c.z + h.z), Vec3::new(0.0, 0.0, -1.0)),
        (Vec3::new(c.x + h.x, c.y, c.z), Vec3::new(-1.0, 0.0, 0.0)),
        (Vec3::new(c.x - h.x, c.y, c.z), Vec3::new(1.0, 0.0, 0.0)),
        (Vec3::new(c.x, c.y + h.y, c.z), Vec3::new(0.0, -1.0, 0.0)),
        (Vec3::new(c.x, c.y - h.y, c.z), Vec3::new(0.0, 1.0, 0.0)),
    ];
    let room = s.room;
    let mut out = Vec::new();
    for (rank, (position, approach)) in poses.into_iter().enumerate() {
        let probe = position - approach * PROBE;
        let outside = probe.x < 0.0
            || probe.y < 0.0
            || probe.z < 0.0
            || probe.x > room.width
            || probe.y > room.depth
            || probe.z > room.height;
        let blocked = s.objects.values().any(|other| {
            other.id != id
                && s.robot.held.as_deref() != Some(other.id.as_str())
                && o.contained_in.as_deref() != Some(other.id.as_str())
                && other.aabb().contains(probe)
        });
        if !outside && !blocked {
            out.push(GraspCandidate {
                position,
                approach,
                score: 1.0 - 0.1 * rank as f64,
                object_id: id.to_string(),
            });
        }
    }
    Ok(out)
}

pub fn eval_graspable(s: &WorldState, id: &str) -> bool {
    generate_grasps(s, id).is_ok_and(|g| !g.is_empty())
}

/// Some surviving grasp lands in a well-visited cell of the arm workspace.
pub fn eval_reachable(s: &WorldState, reach: &ReachabilityMap, id: &str) -> bool {
    let Ok(grasps) = generate_grasps(s, id) else {
        return false;
    };
    grasps
        .iter()
        .any(|g| reach.index_at(s.robot.base_pose.to_local(g.position)) >= THETA_REACH)
}

struct SurfaceGrid {
    nx: usize,
    ny: usize,
    origin: Vec3,
    free: Vec<bool>,
    top: f64,
}

fn surface_grid(s: &WorldState, id: &str) -> Option<SurfaceGrid> {
    let o = s.objects.get(id)?;
    if !o.surface {
        return None;
    }
    let nx = (o.bbox.x / SURFACE_CELL + EPS).floor() as usize;
    let ny = (o.bbox.y / SURFACE_CELL + EPS).floor() as usize;
    let min = o.aabb().min();
    let mut free = vec![true; nx * ny];
    for other in s.objects.values() {
        if other.supported_by.as_deref() != Some(id) {
            continue;
        }
        let (lo, hi) = (other.aabb().min(), other.aabb().max());
        for iy in 0..ny {
            for ix in 0..nx {
                let x0 = min.x + ix as f64 * SURFACE_CELL;
                let y0 = min.y + iy as f64 * SURFACE_CELL;
                let covers = lo.x < x0 + SURFACE_CELL - EPS
                    && hi.x > x0 + EPS
                    && lo.y < y0 + SURFACE_CELL - EPS
                    && hi.y > y0 + EPS;
                if covers {
                    free[ix + nx * iy] = false;
                }
            }
        }
    }
    Some(SurfaceGrid {
        nx,
        ny,
        origin: min,
        free,
        top: o.top(),
    })
}

/// Footprint in surface cells of what the gripper holds; one cell if empty.
fn held_footprint(s: &WorldState) -> (usize, usize, f64) {
    match s.robot.held.as_ref().and_then(|h| s.objects.get(h)) {
        Some(h) => (
            ((h.bbox.x / SURFACE_CELL) - EPS).ceil().max(1.0) as usize,
            ((h.bbox.y / SURFACE_CELL) - EPS).ceil().max(1.0) as usize,
            h.bbox.z,
        ),
        None => (1, 1, 0.0),
    }
}

/// A free window on the surface fits the held object's footprint.
pub fn eval_placeable(s: &WorldState, id: &str) -> bool {
    let Some(g) = surface_grid(s, id) else {
        return false;
    };
    let (fw, fh, _) = held_footprint(s);
    if fw > g.nx || fh > g.ny {
        return false;
    }
    (0..=g.ny - fh).any(|y0| {
        (0..=g.nx - fw).any(|x0| (y0..y0 + fh).all(|y| (x0..x0 + fw).all(|x| g.free[x + g.nx * y])))
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median of the free surface cells, at the height where the held object
/// rests on the top face.
pub fn place_point(s: &WorldState, id: &str) -> Result<Vec3, GroundingError> {
    if !eval_placeable(s, id) {
        return Err(GroundingError::NotPlaceable(id.to_string()));
    }
    let g = surface_grid(s, id).expect("placeable implies a surface");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            if g.free[ix + g.nx * iy] {
                xs.push(g.origin.x + (ix as f64 + 0.5) * SURFACE_CELL);
                ys.push(g.origin.y + (iy as f64 + 0.5) * SURFACE_CELL);
            }
        }
    }
    let (_, _, height) = held_footprint(s);
    Ok(Vec3::new(median(xs), median(ys), g.top + height / 2.0))
}
