use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{embed_text, Embedding};
use super::GroundingError;
use crate::geometry::Vec3;
use crate::worldsim::{RoomSpec, ScanRecord, WorldState};

/// Minimum similarity for [`locate`] to report a match.
pub const TAU_LOC: f64 = 0.35;
pub const MAP_RESOLUTION: f64 = 0.1;
const MAP_FORMAT: &str = "taskloop-voxel-map";
const MAP_VERSION: u32 = 1;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapBounds {
    pub origin: Vec3,
    pub size: Vec3,
    pub resolution: f64,
}

impl MapBounds {
    pub fn for_room(room: &RoomSpec) -> Self {
        Self {
            origin: Vec3::default(),
            size: Vec3::new(room.width, room.depth, room.height),
            resolution: MAP_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelCell {
    pub occupied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    pub top_height: f64,
}

/// Sparse voxel grid; absent cells are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVoxelMap {
    pub resolution: f64,
    pub origin: Vec3,
    /// Cell counts along x, y, z.
    pub dims: [usize; 3],
    /// Keyed by `ix + nx * (iy + ny * iz)`.
    pub cells: BTreeMap<usize, VoxelCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub position: Vec3,
    pub similarity: f64,
    pub cell: usize,
    pub object_id: Option<String>,
}

impl SemanticVoxelMap {
    pub fn empty(bounds: &MapBounds) -> Self {
        let dim = |extent: f64| ((extent / bounds.resolution) - EPS).ceil().max(1.0) as usize;
        Self {
            resolution: bounds.resolution,
            origin: bounds.origin,
            dims: [dim(bounds.size.x), dim(bounds.size.y), dim(bounds.size.z)],
            cells: BTreeMap::new(),
        }
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn cell_center(&self, index: usize) -> Vec3 {
        let [ix, iy, iz] = self.coords(index);
        let r = self.resolution;
        self.origin + Vec3::new((ix as f64 + 0.5) * r, (iy as f64 + 0.5) * r, (iz as f64 + 0.5) * r)
    }

    /// Center of a floor column at z = 0.
    pub fn column_center(&self, cell: [usize; 2]) -> Vec3 {
        let r = self.resolution;
        Vec3::new(
            self.origin.x + (cell[0] as f64 + 0.5) * r,
            self.origin.y + (cell[1] as f64 + 0.5) * r,
            0.0,
        )
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let rel = p - self.origin;
        let f = |v: f64, n: usize| {
            let i = (v / self.resolution + EPS).floor();
            (i >= 0.0 && (i as usize) < n).then_some(i as usize)
        };
        Some([f(rel.x, self.dims[0])?, f(rel.y, self.dims[1])?, f(rel.z, self.dims[2])?])
    }

    pub fn embedded_cells(&self) -> impl Iterator<Item = (usize, &VoxelCell, &Embedding)> {
        self.cells
            .iter()
            .filter_map(|(&i, c)| c.embedding.as_ref().map(|e| (i, c, e)))
    }

    /// Mean center of the cells labelled with `object_id`.
    pub fn object_centroid(&self, object_id: &str) -> Option<Vec3> {
        let mut sum = Vec3::new(0.0, 0.0, 0.0);
        let mut n = 0usize;
        for (&i, c) in &self.cells {
            if c.object_id.as_deref() == Some(object_id) {
                sum = sum + self.cell_center(i);
                n += 1;
            }
        }
        (n > 0).then(|| sum * (1.0 / n as f64))
    }

    pub fn save(&self, path: &Path) -> Result<(), GroundingError> {
        let file = MapFile {
            format: MAP_FORMAT.to_string(),
            version: MAP_VERSION,
            map: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| GroundingError::MapFile(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| GroundingError::MapFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GroundingError::MapFile(format!("{}: {e}", path.display())))?;
        let file: MapFile = serde_json::from_str(&text).map_err(|e| GroundingError::MapFile(e.to_string()))?;
        if file.format != MAP_FORMAT || file.version != MAP_VERSION {
            return Err(GroundingError::MapFile(format!(
                "unsupported map format {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.map)
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    format: String,
    version: u32,
    map: SemanticVoxelMap,
}

/// Cell index range `[lo, hi)` overlapping the open interval `(a, b)`.
fn span(a: f64, b: f64, origin: f64, res: f64) -> (usize, usize) {
    let lo = ((a - origin) / res + EPS).floor().max(0.0) as usize;
    let hi = ((b - origin) / res - EPS).ceil().max(0.0) as usize;
    (lo, hi.max(lo + 1))
}

/// Marks every scan's box cells occupied and stores the label embedding in
/// the centroid cell. Scans are applied in order; a later scan overwrites
/// earlier cell contents.
pub fn build_map(scans: &[ScanRecord], bounds: &MapBounds) -> Result<SemanticVoxelMap, GroundingError> {
    if bounds.resolution <= 0.0 {
        return Err(GroundingError::InvalidBounds);
    }
    let mut map = SemanticVoxelMap::empty(bounds);
    let hi_bound = bounds.origin + bounds.size;
    for scan in scans {
        let lo = scan.centroid - scan.bbox * 0.5;
        let hi = scan.centroid + scan.bbox * 0.5;
        let o = bounds.origin;
        if lo.x < o.x - EPS
            || lo.y < o.y - EPS
            || lo.z < o.z - EPS
            || hi.x > hi_bound.x + EPS
            || hi.y > hi_bound.y + EPS
            || hi.z > hi_bound.z + EPS
        {
            return Err(GroundingError::OutOfBounds(scan.object_id.clone()));
        }
        let r = map.resolution;
        let (x0, x1) = span(lo.x, hi.x, o.x, r);
        let (y0, y1) = span(lo.y, hi.y, o.y, r);
        let (z0, z1) = span(lo.z, hi.z, o.z, r);
        let top = hi.z;
        for iz in z0..z1.min(map.dims[2]) {
            for iy in y0..y1.min(map.dims[1]) {
                for ix in x0..x1.min(map.dims[0]) {
                    let idx = map.index(ix, iy, iz);
                    map.cells.insert(
                        idx,
                        VoxelCell {
                            occupied: true,
                            embedding: None,
                            object_id: Some(scan.object_id.clone()),
                            top_height: top,
                        },
                    );
                }
            }
        }
        if let Some([ix, iy, iz]) = map.cell_of(scan.centroid) {
            let idx = map.index(ix, iy, iz);
            map.cells.insert(
                idx,
                VoxelCell {
                    occupied: true,
                    embedding: Some(embed_text(&scan.label)?),
                    object_id: Some(scan.object_id.clone()),
                    top_height: top,
                },
            );
        }
    }
    Ok(map)
}

/// Best-matching embedded cell for a text query; ties go to the lowest index.
pub fn locate(map: &SemanticVoxelMap, query: &str) -> Option<Located> {
    let q = embed_text(query).ok()?;
    let mut best: Option<(usize, f64, &VoxelCell)> = None;
    for (i, cell, e) in map.embedded_cells() {
        let s = e.dot(&q);
        if best.is_none_or(|(_, b, _)| s > b) {
            best = Some((i, s, cell));
        }
    }
    let (cell, similarity, c) = best?;
    (similarity >= TAU_LOC).then(|| Located {
        position: map.cell_center(cell),
        similarity,
        cell,
        object_id: c.object_id.clone(),
    })
}

/// Depth of an object in the support/containment chain.
fn depth(s: &WorldState, id: &str) -> usize {
    let mut d = 0;
    let mut cur = id;
    while let Some(o) = s.objects.get(cur) {
        match o.supported_by.as_deref().or(o.contained_in.as_deref()) {
            Some(p) if d < s.objects.len() => {
                d += 1;
                cur = p;
            }
            _ => break,
        }
    }
    d
}

/// Scan records for every object not in the gripper, ignoring the camera
/// cone and occlusion. Supporters come before what rests on them so that
/// overwrites keep the smaller object's cells.
pub fn survey(s: &WorldState) -> Vec<ScanRecord> {
    let mut objs: Vec<_> = s
        .objects
        .values()
        .filter(|o| s.robot.held.as_deref() != Some(o.id.as_str()))
        .collect();
    objs.sort_by_key(|o| (depth(s, &o.id), o.id.clone()));
    objs.into_iter().map(ScanRecord::of).collect()
}

/// Map of the room as currently laid out, without the held object.
pub fn occupancy_map(s: &WorldState) -> SemanticVoxelMap {
    build_map(&survey(s), &MapBounds::for_room(&s.room)).expect("scene objects lie inside the room")
}
