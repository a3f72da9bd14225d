use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GroundingError;
use crate::geometry::Vec3;

/// Cells with a reach index below this are treated as unreachable.
pub const THETA_REACH: f64 = 0.05;
pub const REACH_RESOLUTION: f64 = 0.05;
const DEFAULT_SAMPLES: usize = 200_000;
const DEFAULT_SEED: u64 = 7;

/// Planar two-link arm on a vertical lift, mounted on the base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    /// Shoulder position in the base frame at zero lift.
    pub shoulder: Vec3,
    pub lift_min: f64,
    pub lift_max: f64,
    pub link1: f64,
    pub link2: f64,
    /// Symmetric limit on both revolute joints, radians.
    pub joint_limit: f64,
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self {
            shoulder: Vec3::new(0.1, 0.0, 0.45),
            lift_min: 0.0,
            lift_max: 0.35,
            link1: 0.35,
            link2: 0.30,
            joint_limit: 2.6,
        }
    }
}

impl ArmSpec {
    pub fn forward(&self, lift: f64, q1: f64, q2: f64) -> Vec3 {
        let x = self.link1 * q1.cos() + self.link2 * (q1 + q2).cos();
        let y = self.link1 * q1.sin() + self.link2 * (q1 + q2).sin();
        self.shoulder + Vec3::new(x, y, lift)
    }
}

/// Visitation counts of sampled end-effector positions in the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityMap {
    pub resolution: f64,
    pub counts: BTreeMap<[i32; 3], u64>,
    pub max_count: u64,
}

impl ReachabilityMap {
    pub fn cell_of(&self, p: Vec3) -> [i32; 3] {
        let f = |v: f64| (v / self.resolution).floor() as i32;
        [f(p.x), f(p.y), f(p.z)]
    }

    /// Visitation count normalized by the busiest cell.
    pub fn index(&self, cell: [i32; 3]) -> f64 {
        match self.counts.get(&cell) {
            Some(&c) if self.max_count > 0 => c as f64 / self.max_count as f64,
            _ => 0.0,
        }
    }

    pub fn index_at(&self, p: Vec3) -> f64 {
        self.index(self.cell_of(p))
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.len()
    }

    fn record(&mut self, p: Vec3) {
        let c = self.counts.entry(self.cell_of(p)).or_insert(0);
        *c += 1;
        self.max_count = self.max_count.max(*c);
    }
}

/// Samples joint configurations uniformly and bins the resulting
/// end-effector positions.
pub fn build_reachability(arm: &ArmSpec, n_samples: usize, rng: &mut impl Rng) -> Result<ReachabilityMap, GroundingError> {
    if arm.link1 <= 0.0 || arm.link2 <= 0.0 {
        return Err(GroundingError::DegenerateArm("link lengths must be positive".into()));
    }
    if arm.lift_max < arm.lift_min || arm.joint_limit <= 0.0 {
        return Err(GroundingError::DegenerateArm("empty joint range".into()));
    }
    if n_samples == 0 {
        return Err(GroundingError::DegenerateArm("at least one sample is needed".into()));
    }
    let mut map = ReachabilityMap {
        resolution: REACH_RESOLUTION,
        counts: BTreeMap::new(),
        max_count: 0,
    };
    let lim = arm.joint_limit;
    for _ in 0..n_samples {
        let lift = if arm.lift_max > arm.lift_min {
            rng.gen_range(arm.lift_min..arm.lift_max)
        } else {
            arm.lift_min
        };
        let q1 = rng.gen_range(-lim..lim);
        let q2 = rng.gen_range(-lim..lim);
        map.record(arm.forward(lift, q1, q2));
    }
    Ok(map)
}

/// Shared map for the default arm, built on first use.
pub fn default_reachability() -> &'static ReachabilityMap {
    static MAP: OnceLock<ReachabilityMap> = OnceLock::new();
    MAP.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
        build_reachability(&ArmSpec::default(), DEFAULT_SAMPLES, &mut rng).expect("default arm is valid")
    })
}
