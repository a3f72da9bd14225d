use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::voxel::SemanticVoxelMap;
use crate::geometry::Vec3;

/// Path length as `straight + diagonal * sqrt(2)`, compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn meters(&self, resolution: f64) -> f64 {
        self.value() * resolution
    }

    /// Length in cells.
    pub fn value(&self) -> f64 {
        f64::from(self.straight) + f64::from(self.diagonal) * std::f64::consts::SQRT_2
    }

    fn octile(a: [usize; 2], b: [usize; 2]) -> Self {
        let dx = a[0].abs_diff(b[0]) as u32;
        let dy = a[1].abs_diff(b[1]) as u32;
        PathCost {
            straight: dx.max(dy) - dx.min(dy),
            diagonal: dx.min(dy),
        }
    }
}

impl Add for PathCost {
    type Output = PathCost;
    fn add(self, o: PathCost) -> PathCost {
        PathCost {
            straight: self.straight + o.straight,
            diagonal: self.diagonal + o.diagonal,
        }
    }
}

impl Ord for PathCost {
    fn cmp(&self, o: &Self) -> Ordering {
        // sign of x - y*sqrt(2) with integers x, y
        let x = i64::from(self.straight) - i64::from(o.straight);
        let y = i64::from(o.diagonal) - i64::from(self.diagonal);
        match (x.signum(), y.signum()) {
            (0, 0) => Ordering::Equal,
            (sx, sy) if sx <= 0 && sy >= 0 => Ordering::Less,
            (sx, sy) if sx >= 0 && sy <= 0 => Ordering::Greater,
            (1, _) => (x * x).cmp(&(2 * y * y)),
            _ => (2 * y * y).cmp(&(x * x)),
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Planar occupancy: a column is blocked if any voxel in it is occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub nx: usize,
    pub ny: usize,
    pub occupied: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    /// `[ix, iy]` floor cells from start to the final cell.
    pub cells: Vec<[usize; 2]>,
    /// Length in meters.
    pub cost: f64,
    pub steps: PathCost,
}

const NEIGHBORS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

impl OccupancyGrid {
    pub fn new(nx: usize, ny: usize, occupied: Vec<bool>) -> Self {
        assert_eq!(occupied.len(), nx * ny);
        Self { nx, ny, occupied }
    }

    pub fn from_map(map: &SemanticVoxelMap) -> Self {
        let [nx, ny, _] = map.dims;
        let mut occupied = vec![false; nx * ny];
        for (&i, c) in &map.cells {
            if c.occupied {
                let [ix, iy, _] = map.coords(i);
                occupied[ix + nx * iy] = true;
            }
        }
        Self { nx, ny, occupied }
    }

    pub fn index(&self, c: [usize; 2]) -> usize {
        c[0] + self.nx * c[1]
    }

    pub fn is_occupied(&self, c: [usize; 2]) -> bool {
        self.occupied[self.index(c)]
    }

    pub fn neighbors(&self, c: [usize; 2]) -> impl Iterator<Item = ([usize; 2], bool)> + '_ {
        NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
            let x = c[0] as i64 + dx;
            let y = c[1] as i64 + dy;
            (x >= 0 && y >= 0 && (x as usize) < self.nx && (y as usize) < self.ny)
                .then_some(([x as usize, y as usize], dx != 0 && dy != 0))
        })
    }

    /// Free cells that count as arriving at `goal`: the free neighbors of the
    /// occupied 8-connected blob containing it, or the goal cell and its free
    /// neighbors when the goal cell itself is free. Sorted by index.
    pub fn goal_region(&self, goal: [usize; 2]) -> Vec<[usize; 2]> {
        let mut in_region = vec![false; self.occupied.len()];
        if self.is_occupied(goal) {
            let mut seen = vec![false; self.occupied.len()];
            let mut queue = VecDeque::from([goal]);
            seen[self.index(goal)] = true;
            while let Some(c) = queue.pop_front() {
                for (n, _) in self.neighbors(c) {
                    let ni = self.index(n);
                    if self.occupied[ni] {
                        if !seen[ni] {
                            seen[ni] = true;
                            queue.push_back(n);
                        }
                    } else {
                        in_region[ni] = true;
                    }
                }
            }
        } else {
            in_region[self.index(goal)] = true;
            for (n, _) in self.neighbors(goal) {
                if !self.is_occupied(n) {
                    in_region[self.index(n)] = true;
                }
            }
        }
        (0..self.occupied.len())
            .filter(|&i| in_region[i])
            .map(|i| [i % self.nx, i / self.nx])
            .collect()
    }

    /// A* from `start` to the goal region of `goal`, 8-connected with unit
    /// and diagonal steps. Ties are broken by f, then h, then cell index.
    pub fn plan(&self, start: [usize; 2], goal: [usize; 2], resolution: f64) -> Option<PathPlan> {
        if self.is_occupied(start) {
            return None;
        }
        let region = self.goal_region(goal);
        if region.is_empty() {
            return None;
        }
        let mut is_goal = vec![false; self.occupied.len()];
        for &c in &region {
            is_goal[self.index(c)] = true;
        }
        let h = |c: [usize; 2]| {
            region
                .iter()
                .map(|&g| PathCost::octile(c, g))
                .min()
                .expect("non-empty region")
        };

        let n = self.occupied.len();
        let mut g_cost: Vec<Option<PathCost>> = vec![None; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let si = self.index(start);
        g_cost[si] = Some(PathCost::default());
        let mut open = BinaryHeap::new();
        let h0 = h(start);
        open.push(Reverse((h0, h0, si)));

        while let Some(Reverse((_, _, i))) = open.pop() {
            if closed[i] {
                continue;
            }
            closed[i] = true;
            let c = [i % self.nx, i / self.nx];
            let gc = g_cost[i].expect("queued cells have a cost");
            if is_goal[i] {
                let mut cells = vec![c];
                let mut cur = i;
                while parent[cur] != usize::MAX {
                    cur = parent[cur];
                    cells.push([cur % self.nx, cur / self.nx]);
                }
                cells.reverse();
                return Some(PathPlan {
                    cells,
                    cost: gc.meters(resolution),
                    steps: gc,
                });
            }
            for (nb, diag) in self.neighbors(c) {
                let ni = self.index(nb);
                if self.occupied[ni] || closed[ni] {
                    continue;
                }
                let step = if diag {
                    PathCost { straight: 0, diagonal: 1 }
                } else {
                    PathCost { straight: 1, diagonal: 0 }
                };
                let ng = gc + step;
                if g_cost[ni].is_none_or(|old| ng < old) {
                    g_cost[ni] = Some(ng);
                    parent[ni] = i;
                    let hn = h(nb);
                    open.push(Reverse((ng + hn, hn, ni)));
                }
            }
        }
        None
    }
}

/// Shortest collision-free floor path from `start` to next to whatever
/// occupies `goal`'s column.
pub fn plan_path(map: &SemanticVoxelMap, start: Vec3, goal: Vec3) -> Option<PathPlan> {
    let grid = OccupancyGrid::from_map(map);
    let s = map.cell_of(Vec3::new(start.x, start.y, map.origin.z))?;
    let g = map.cell_of(Vec3::new(goal.x, goal.y, map.origin.z))?;
    grid.plan([s[0], s[1]], [g[0], g[1]], map.resolution)
}
