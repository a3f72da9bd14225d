use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskloop::geometry::Vec3;
use taskloop::grounding::{
    build_reachability, default_reachability, embed_text, eval_reachable, locate, occupancy_map, plan_path, ArmSpec,
    OccupancyGrid, PathCost, SemanticVoxelMap, TAU_LOC,
};
use taskloop::pddl::{parse_formula, GroundAction};
use taskloop::worldsim::{execute, goal_satisfied, load_scene, FailureRates, SceneSpec, WorldState, CANONICAL_SCENES};

fn random_grid(rng: &mut ChaCha8Rng, n: usize, density: f64) -> OccupancyGrid {
    OccupancyGrid::new(n, n, (0..n * n).map(|_| rng.gen_bool(density)).collect())
}

fn adjacent(a: [usize; 2], b: [usize; 2]) -> bool {
    let dx = a[0].abs_diff(b[0]);
    let dy = a[1].abs_diff(b[1]);
    dx <= 1 && dy <= 1 && (dx, dy) != (0, 0)
}

/// Free cells touching the occupied blob at `goal`, or the goal and its free
/// neighbors when it is free.
fn region(g: &OccupancyGrid, goal: [usize; 2]) -> Vec<bool> {
    let n = g.nx * g.ny;
    let idx = |c: [usize; 2]| c[0] + g.nx * c[1];
    let nbrs = |c: [usize; 2]| {
        let mut v = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (c[0] as i64 + dx, c[1] as i64 + dy);
                if (dx, dy) != (0, 0) && x >= 0 && y >= 0 && (x as usize) < g.nx && (y as usize) < g.ny {
                    v.push([x as usize, y as usize]);
                }
            }
        }
        v
    };
    let mut out = vec![false; n];
    if !g.occupied[idx(goal)] {
        out[idx(goal)] = true;
        for m in nbrs(goal) {
            out[idx(m)] = !g.occupied[idx(m)];
        }
        return out;
    }
    let mut seen = vec![false; n];
    seen[idx(goal)] = true;
    let mut q = VecDeque::from([goal]);
    while let Some(c) = q.pop_front() {
        for m in nbrs(c) {
            if g.occupied[idx(m)] {
                if !seen[idx(m)] {
                    seen[idx(m)] = true;
                    q.push_back(m);
                }
            } else {
                out[idx(m)] = true;
            }
        }
    }
    out
}

/// Plain Dijkstra over (straight, diagonal) step counts.
fn dijkstra(g: &OccupancyGrid, start: [usize; 2], goal: [usize; 2]) -> Option<PathCost> {
    let idx = |c: [usize; 2]| c[0] + g.nx * c[1];
    if g.occupied[idx(start)] {
        return None;
    }
    let target = region(g, goal);
    let mut best: Vec<Option<PathCost>> = vec![None; g.nx * g.ny];
    let mut heap = BinaryHeap::new();
    best[idx(start)] = Some(PathCost::default());
    heap.push(Reverse((PathCost::default(), idx(start))));
    while let Some(Reverse((d, i))) = heap.pop() {
        if best[i] != Some(d) {
            continue;
        }
        if target[i] {
            return Some(d);
        }
        let c = [i % g.nx, i / g.nx];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (c[0] as i64 + dx, c[1] as i64 + dy);
                if (dx, dy) == (0, 0) || x < 0 || y < 0 || x as usize >= g.nx || y as usize >= g.ny {
                    continue;
                }
                let j = idx([x as usize, y as usize]);
                if g.occupied[j] {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    PathCost { straight: 0, diagonal: 1 }
                } else {
                    PathCost { straight: 1, diagonal: 0 }
                };
                let nd = d + step;
                if best[j].is_none_or(|b| nd < b) {
                    best[j] = Some(nd);
                    heap.push(Reverse((nd, j)));
                }
            }
        }
    }
    None
}

#[test]
fn astar_matches_dijkstra_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut solved = 0;
    for _ in 0..100 {
        let g = random_grid(&mut rng, 32, 0.25);
        let start = [rng.gen_range(0..32), rng.gen_range(0..32)];
        let goal = [rng.gen_range(0..32), rng.gen_range(0..32)];
        let expected = dijkstra(&g, start, goal);
        let got = g.plan(start, goal, 0.1);
        assert_eq!(got.as_ref().map(|p| p.steps), expected, "start {start:?} goal {goal:?}");
        if let Some(p) = got {
            solved += 1;
            let target = region(&g, goal);
            assert_eq!(p.cells[0], start);
            assert!(target[g.index(*p.cells.last().unwrap())]);
            let mut total = PathCost::default();
            for w in p.cells.windows(2) {
                assert!(adjacent(w[0], w[1]));
                assert!(!g.is_occupied(w[1]));
                let diag = w[0][0] != w[1][0] && w[0][1] != w[1][1];
                total = total + if diag { PathCost { straight: 0, diagonal: 1 } } else { PathCost { straight: 1, diagonal: 0 } };
            }
            assert_eq!(total, p.steps);
            assert!((p.cost - p.steps.value() * 0.1).abs() < 1e-12);
        }
    }
    assert!(solved > 50, "only {solved} solvable grids");
}

#[test]
fn free_room_path_is_octile_distance() {
    let g = OccupancyGrid::new(20, 20, vec![false; 400]);
    let p = g.plan([0, 0], [10, 4], 0.1).unwrap();
    // nearest arrival cell is the goal's neighbor (9, 3)
    assert_eq!(p.steps, PathCost { straight: 6, diagonal: 3 });
    assert_eq!(*p.cells.last().unwrap(), [9, 3]);
}

fn nominal(name: &str) -> WorldState {
    load_scene(&SceneSpec::canonical(name).unwrap().without_jitter()).unwrap()
}

fn brute_locate(map: &SemanticVoxelMap, query: &str) -> Option<(usize, f64)> {
    let q = embed_text(query).ok()?;
    let mut best: Option<(usize, f64)> = None;
    for (&i, cell) in &map.cells {
        let Some(e) = &cell.embedding else { continue };
        let s: f64 = e.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.filter(|&(_, s)| s >= TAU_LOC)
}

#[test]
fn locate_matches_brute_force() {
    let words = ["blue", "red", "box", "table", "jacket", "pill", "book", "shelf", "bucket", "door", "chair", "lamp", "x"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in CANONICAL_SCENES {
        let world = nominal(name);
        let map = occupancy_map(&world);
        let mut queries: Vec<String> = world
            .objects
            .values()
            .flat_map(|o| std::iter::once(o.label.clone()).chain(o.aliases.iter().cloned()))
            .collect();
        for _ in 0..50 {
            let n = rng.gen_range(1..4);
            let q: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
            queries.push(q.join(" "));
        }
        for q in &queries {
            let got = locate(&map, q).map(|l| (l.cell, l.similarity));
            assert_eq!(got, brute_locate(&map, q), "{name}: {q:?}");
        }
        for o in world.objects.values() {
            let hit = locate(&map, &o.label).unwrap_or_else(|| panic!("{name}: {} not found", o.label));
            assert!(hit.similarity > 0.99, "{name}: {}", o.label);
        }
    }
}

#[test]
fn path_to_every_object_in_every_scene() {
    for name in CANONICAL_SCENES {
        let world = nominal(name);
        let map = occupancy_map(&world);
        let start = world.robot.base_pose.position();
        for o in world.objects.values().filter(|o| o.movable) {
            assert!(plan_path(&map, start, o.position).is_some(), "{name}: no path to {}", o.id);
        }
    }
}

#[test]
fn reachability_is_seed_deterministic() {
    let arm = ArmSpec::default();
    let a = build_reachability(&arm, 20_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = build_reachability(&arm, 20_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    let total: u64 = a.counts.values().sum();
    assert_eq!(total, 20_000);
    let map = default_reachability();
    let far = arm.shoulder + Vec3::new(arm.link1 + arm.link2 + 0.2, 0.0, 0.1);
    assert_eq!(map.index_at(far), 0.0);
}

proptest! {
    #[test]
    fn reach_index_is_normalized(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.0f64..1.5) {
        let map = default_reachability();
        let v = map.index_at(Vec3::new(x, y, z));
        prop_assert!((0.0..=1.0).contains(&v));
        let r = ((x - 0.1).powi(2) + y.powi(2)).sqrt();
        if r > 0.35 + 0.30 + map.resolution * 2.0 {
            prop_assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn scene_loading_is_seeded() {
    for name in CANONICAL_SCENES {
        let spec = SceneSpec::canonical(name).unwrap();
        let a = load_scene(&spec.clone().with_seed(5)).unwrap();
        let b = load_scene(&spec.clone().with_seed(5)).unwrap();
        assert_eq!(a, b);
        let c = load_scene(&spec.clone().with_seed(6)).unwrap();
        assert_eq!(a.object_ids(), c.object_ids());
    }
}

fn act(s: &str, args: &[&str]) -> GroundAction {
    GroundAction::new(s, args.iter().copied())
}

/// Runs `plan`, inserting adjusts until each manipulation target is reachable.
fn run_plan(world: &mut WorldState, plan: &[GroundAction], rng: &mut ChaCha8Rng) {
    let reach = default_reachability();
    for a in plan {
        if matches!(a.schema.as_str(), "grasp" | "place" | "insert" | "pull") {
            let target = a.args.last().unwrap().clone();
            for _ in 0..3 {
                if eval_reachable(world, reach, &target) {
                    break;
                }
                let (next, _) = execute(world, &act("adjust", &[&target]), rng);
                *world = next;
            }
        }
        let (next, out) = execute(world, a, rng);
        assert!(out.is_success(), "{a} failed: {out:?}");
        *world = next;
    }
}

#[test]
fn place_box_plan_reaches_goal() {
    let mut world = nominal("place_box");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = [
        act("move", &["paper_box"]),
        act("grasp", &["paper_box"]),
        act("move", &["black_table"]),
        act("place", &["paper_box", "black_table"]),
    ];
    run_plan(&mut world, &plan, &mut rng);
    let goal = parse_formula("(on paper_box black_table)", None).unwrap();
    assert!(goal_satisfied(&world, &goal));
}

#[test]
fn failures_leave_objects_unchanged() {
    let spec = SceneSpec::canonical("place_box").unwrap().without_jitter().with_p_fail(FailureRates::uniform(1.0));
    let world = load_scene(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for a in [act("move", &["paper_box"]), act("grasp", &["paper_box"]), act("place", &["paper_box", "black_table"])] {
        let (next, out) = execute(&world, &a, &mut rng);
        assert!(!out.is_success(), "{a} succeeded at p_fail 1");
        assert_eq!(next.objects, world.objects);
        assert_eq!(next.robot.held, world.robot.held);
    }
    let (next, out) = execute(&world, &act("stop", &[]), &mut rng);
    assert!(out.is_success());
    assert_eq!(next.objects, world.objects);
}

#[test]
fn execution_is_rng_deterministic() {
    let spec = SceneSpec::canonical("take_jacket").unwrap().with_p_fail(FailureRates::uniform(0.5));
    let world = load_scene(&spec).unwrap();
    let a = act("move", &["blue_jacket"]);
    for seed in 0..20 {
        let x = execute(&world, &a, &mut ChaCha8Rng::seed_from_u64(seed));
        let y = execute(&world, &a, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(x, y);
    }
}
