//! Scene descriptions and the five shipped scenes.
//!
//! A scene file is JSON:
//!
//! ```text
//! {
//!   "name": "place_box",
//!   "instruction": "...",            // default instruction for the task
//!   "goal": "(on paper_box black_table)",
//!   "room": { "width": 6.0, "depth": 6.0, "height": 2.5 },
//!   "robot": { "x": 1.0, "y": 1.0, "heading": 0.0 },
//!   "objects": [ ObjectSpec, ... ],
//!   "jitter": { "robot": 0.4, "objects": 0.1 },   // optional
//!   "p_fail": { "navigation": 0.05, "manipulation": 0.05 },  // optional
//!   "seed": 0                                     // optional
//! }
//! ```
//!
//! Each object gives `id`, `label`, optional `aliases`, `size` `[x, y, z]`
//! in meters and exactly one placement: `position` `[x, y]` on the floor,
//! `on` + `offset` `[dx, dy]` from the supporter's top-face center, or
//! `in` + `offset` `[dx, dy, dz]` from the container's center. Boolean flags
//! `container`, `opened`, `surface`, `shelf` and `movable` default to false.
//! Supporters and containers must be listed before the objects they hold.

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Per-category failure probabilities. Recovery and terminal actions never fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRates {
    pub navigation: f64,
    pub manipulation: f64,
}

impl Default for FailureRates {
    fn default() -> Self {
        Self {
            navigation: 0.05,
            manipulation: 0.05,
        }
    }
}

impl FailureRates {
    pub fn uniform(p: f64) -> Self {
        Self {
            navigation: p,
            manipulation: p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Half-width of the uniform offset applied to the robot start, meters.
    /// A non-zero value also randomizes the start heading.
    pub robot: f64,
    /// Half-width of the offset applied to supported and contained objects.
    pub objects: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            robot: 0.4,
            objects: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub size: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    #[serde(rename = "in")]
    pub inside: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offset: Vec<f64>,
    #[serde(default)]
    pub container: bool,
    #[serde(default)]
    pub opened: bool,
    #[serde(default)]
    pub surface: bool,
    #[serde(default)]
    pub shelf: bool,
    #[serde(default)]
    pub movable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub instruction: String,
    /// Goal formula over object ids, used for scoring episodes.
    pub goal: String,
    pub room: RoomSpec,
    pub robot: StartPose,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub jitter: Jitter,
    #[serde(default)]
    pub p_fail: FailureRates,
    #[serde(default)]
    pub seed: u64,
}

/// Names of the shipped scenes, in task order.
pub const CANONICAL_SCENES: [&str; 5] = ["place_box", "take_jacket", "take_pillbox", "insert_book", "lift_bucket"];

fn asset(name: &str) -> Option<&'static str> {
    Some(match name {
        "place_box" => include_str!("../../assets/scenes/place_box.json"),
        "take_jacket" => include_str!("../../assets/scenes/take_jacket.json"),
        "take_pillbox" => include_str!("../../assets/scenes/take_pillbox.json"),
        "insert_book" => include_str!("../../assets/scenes/insert_book.json"),
        "lift_bucket" => include_str!("../../assets/scenes/lift_bucket.json"),
        _ => return None,
    })
}

impl SceneSpec {
    /// One of the shipped scenes.
    pub fn canonical(name: &str) -> Result<Self, WorldError> {
        let text = asset(name).ok_or_else(|| WorldError::UnknownScene(name.to_string()))?;
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        serde_json::from_str(text).map_err(|e| WorldError::InvalidScene(e.to_string()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_p_fail(mut self, p_fail: FailureRates) -> Self {
        self.p_fail = p_fail;
        self
    }

    pub fn without_jitter(mut self) -> Self {
        self.jitter = Jitter {
            robot: 0.0,
            objects: 0.0,
        };
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenes_parse() {
        for name in CANONICAL_SCENES {
            let spec = SceneSpec::canonical(name).unwrap();
            assert_eq!(spec.name, name);
            assert!(crate::pddl::parse_formula(&spec.goal, None).is_ok());
        }
        assert!(matches!(SceneSpec::canonical("nosuch"), Err(WorldError::UnknownScene(_))));
    }
}
