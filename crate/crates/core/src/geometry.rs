//! Small vector and box helpers shared by the simulator and grounding.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist_xy(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box given by its center and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub center: Vec3,
    pub size: Vec3,
}

impl Aabb {
    pub fn new(center: Vec3, size: Vec3) -> Self {
        Self { center, size }
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.size * 0.5
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.size * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z
    }

    /// Overlap with positive volume; touching faces do not count.
    pub fn overlaps(&self, o: &Aabb, tol: f64) -> bool {
        let (a0, a1, b0, b1) = (self.min(), self.max(), o.min(), o.max());
        a0.x < b1.x - tol
            && b0.x < a1.x - tol
            && a0.y < b1.y - tol
            && b0.y < a1.y - tol
            && a0.z < b1.z - tol
            && b0.z < a1.z - tol
    }

    /// Whether `o` fits inside this box, allowing `tol` slack per face.
    pub fn encloses(&self, o: &Aabb, tol: f64) -> bool {
        let (a0, a1, b0, b1) = (self.min(), self.max(), o.min(), o.max());
        b0.x >= a0.x - tol
            && b0.y >= a0.y - tol
            && b0.z >= a0.z - tol
            && b1.x <= a1.x + tol
            && b1.y <= a1.y + tol
            && b1.z <= a1.z + tol
    }
}

/// Planar robot pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    /// World point expressed in this pose's frame (z unchanged).
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Vec3::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    }

    pub fn heading_to(&self, p: Vec3) -> f64 {
        wrap_angle((p.y - self.y).atan2(p.x - self.x))
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}
