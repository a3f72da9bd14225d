//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! report is printed whether or not everything passes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskloop::grounding::{embed_text, locate, occupancy_map, OccupancyGrid, PathCost, SemanticVoxelMap, TAU_LOC};
use taskloop::oracle::{
    derive_seed, eval_promptable, Backend, BackendRequest, EndpointConfig, HttpBackend, Message, MockReply, MockServer,
    OracleError, ScriptedBackend, TruthView,
};
use taskloop::pddl::{
    apply, applicable, canonical_domain, forward_search, holds, parse_domain, parse_problem, print_domain, GroundAction,
    GroundAtom, CANONICAL_DOMAIN,
};
use taskloop::planner::{
    run_episode, run_scripted_benchmark, select, write_jsonl, BenchmarkRun, Candidate, PlannerConfig, Variant,
};
use taskloop::worldsim::{execute, ground_truth_atoms, load_scene, FailureRates, SceneSpec, WorldState, CANONICAL_SCENES};

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: u32, name: &str, result: Result<String, String>, elapsed: Duration, limit: Option<Duration>) {
        let late = limit.is_some_and(|l| elapsed > l);
        let (ok, detail) = match result {
            Ok(d) if !late => (true, d),
            Ok(d) => (false, format!("{d}; took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.unwrap().as_secs_f64())),
            Err(d) => (false, d),
        };
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn pddl_fidelity() -> Result<String, String> {
    let d = parse_domain(CANONICAL_DOMAIN).map_err(|e| e.to_string())?;
    check(d.actions.len() == 13, format!("{} actions", d.actions.len()))?;
    check(d.predicates.len() == 10, format!("{} predicates", d.predicates.len()))?;
    let printed = print_domain(&d);
    let again = parse_domain(&printed).map_err(|e| e.to_string())?;
    check(again == d && print_domain(&again) == printed, "print/parse is not a fixpoint")?;
    Ok("13 actions, 10 predicates, round trip is a fixpoint".into())
}

const PLACE_BOX: &str = "(define (problem place_box) (:domain room)
  (:objects paper_box wooden_table black_table - locatable)
  (:init (on paper_box wooden_table) (find paper_box) (find wooden_table) (find black_table)
         (graspable paper_box) (placeable black_table) (reachable paper_box) (reachable black_table))
  (:goal (on paper_box black_table)))";

fn oracle_plan() -> Result<String, String> {
    let d = canonical_domain();
    let p = parse_problem(PLACE_BOX, &d).map_err(|e| e.to_string())?;
    let out = forward_search(&d, &p, 100_000).map_err(|e| e.to_string())?;
    let plan = out.plan().ok_or("no plan")?;
    let schemas: Vec<&str> = plan.iter().map(|a| a.schema.as_str()).collect();
    check(schemas == ["move", "scan", "grasp", "move", "place"], format!("plan {schemas:?}"))?;
    let mut s = p.init.clone();
    for a in plan {
        check(applicable(&d, a, &s).unwrap_or(false), format!("{a} not applicable"))?;
        s = apply(&d, a, &s).map_err(|e| e.to_string())?;
    }
    check(holds(&p.goal, &s).unwrap_or(false), "goal not reached")?;
    let text: Vec<String> = plan.iter().map(ToString::to_string).collect();
    Ok(text.join(" "))
}

fn neighbors(g: &OccupancyGrid, c: [usize; 2]) -> Vec<([usize; 2], bool)> {
    let mut v = Vec::new();
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (x, y) = (c[0] as i64 + dx, c[1] as i64 + dy);
            if (dx, dy) != (0, 0) && x >= 0 && y >= 0 && (x as usize) < g.nx && (y as usize) < g.ny {
                v.push(([x as usize, y as usize], dx != 0 && dy != 0));
            }
        }
    }
    v
}

fn arrival_region(g: &OccupancyGrid, goal: [usize; 2]) -> Vec<bool> {
    let idx = |c: [usize; 2]| c[0] + g.nx * c[1];
    let mut out = vec![false; g.nx * g.ny];
    if !g.occupied[idx(goal)] {
        out[idx(goal)] = true;
        for (m, _) in neighbors(g, goal) {
            out[idx(m)] = !g.occupied[idx(m)];
        }
        return out;
    }
    let mut seen = vec![false; g.nx * g.ny];
    seen[idx(goal)] = true;
    let mut q = VecDeque::from([goal]);
    while let Some(c) = q.pop_front() {
        for (m, _) in neighbors(g, c) {
            if !g.occupied[idx(m)] {
                out[idx(m)] = true;
            } else if !seen[idx(m)] {
                seen[idx(m)] = true;
                q.push_back(m);
            }
        }
    }
    out
}

fn dijkstra(g: &OccupancyGrid, start: [usize; 2], goal: [usize; 2]) -> Option<PathCost> {
    let idx = |c: [usize; 2]| c[0] + g.nx * c[1];
    if g.occupied[idx(start)] {
        return None;
    }
    let target = arrival_region(g, goal);
    let mut best = vec![None; g.nx * g.ny];
    best[idx(start)] = Some(PathCost::default());
    let mut heap = BinaryHeap::from([Reverse((PathCost::default(), idx(start)))]);
    while let Some(Reverse((d, i))) = heap.pop() {
        if best[i] != Some(d) {
            continue;
        }
        if target[i] {
            return Some(d);
        }
        for (m, diag) in neighbors(g, [i % g.nx, i / g.nx]) {
            let j = idx(m);
            if g.occupied[j] {
                continue;
            }
            let nd = d + if diag { PathCost { straight: 0, diagonal: 1 } } else { PathCost { straight: 1, diagonal: 0 } };
            if best[j].is_none_or(|b: PathCost| nd < b) {
                best[j] = Some(nd);
                heap.push(Reverse((nd, j)));
            }
        }
    }
    None
}

fn navigation_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut solved = 0;
    for k in 0..100 {
        let g = OccupancyGrid::new(32, 32, (0..32 * 32).map(|_| rng.gen_bool(0.25)).collect());
        let start = [rng.gen_range(0..32), rng.gen_range(0..32)];
        let goal = [rng.gen_range(0..32), rng.gen_range(0..32)];
        let plan = g.plan(start, goal, 0.1);
        let reference = dijkstra(&g, start, goal);
        check(plan.as_ref().map(|p| p.steps) == reference, format!("grid {k}: A* {plan:?} vs Dijkstra {reference:?}"))?;
        if let Some(p) = plan {
            solved += 1;
            let region = arrival_region(&g, goal);
            check(p.cells[0] == start && region[g.index(*p.cells.last().unwrap())], format!("grid {k}: bad endpoints"))?;
            for w in p.cells.windows(2) {
                let step_ok = w[0][0].abs_diff(w[1][0]) <= 1 && w[0][1].abs_diff(w[1][1]) <= 1 && w[0] != w[1];
                check(step_ok && !g.is_occupied(w[1]), format!("grid {k}: invalid step"))?;
            }
        }
    }
    Ok(format!("100 grids equal, {solved} with a path"))
}

fn brute_locate(map: &SemanticVoxelMap, query: &str) -> Option<(usize, f64)> {
    let q = embed_text(query).ok()?;
    let mut best: Option<(usize, f64)> = None;
    for (&i, cell) in &map.cells {
        if let Some(e) = &cell.embedding {
            let s: f64 = e.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.filter(|&(_, s)| s >= TAU_LOC)
}

fn retrieval_equivalence() -> Result<String, String> {
    let vocab = ["blue", "paper", "box", "table", "jacket", "pill", "book", "shelf", "bucket", "door", "bench", "white", "q"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut n = 0;
    for name in CANONICAL_SCENES {
        let world = load_scene(&SceneSpec::canonical(name).unwrap().without_jitter()).map_err(|e| e.to_string())?;
        let map = occupancy_map(&world);
        let mut queries: Vec<String> =
            world.objects.values().flat_map(|o| std::iter::once(o.label.clone()).chain(o.aliases.clone())).collect();
        for _ in 0..50 {
            let k = rng.gen_range(1..4);
            queries.push((0..k).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect::<Vec<_>>().join(" "));
        }
        for q in &queries {
            let got = locate(&map, q).map(|h| (h.cell, h.similarity));
            check(got == brute_locate(&map, q), format!("{name}: {q:?} differs"))?;
            n += 1;
        }
    }
    Ok(format!("{n} queries equal brute force"))
}

fn benchmark() -> Result<BenchmarkRun, String> {
    let tasks: Vec<SceneSpec> = CANONICAL_SCENES.iter().map(|n| SceneSpec::canonical(n).unwrap()).collect();
    let base = PlannerConfig {
        k_candidates: 4,
        horizon: 20,
        epsilon: 0.05,
        p_fail: FailureRates::uniform(0.05),
        seed: 0,
        ..PlannerConfig::default()
    };
    run_scripted_benchmark(&tasks, 100, &base, &Variant::ALL).map_err(|e| e.to_string())
}

fn rates(run: &BenchmarkRun, v: Variant) -> (Vec<f64>, f64) {
    let c = run.metrics.variant(v).expect("variant ran");
    (c.tasks.iter().map(|t| t.success_rate).collect(), c.mean_success_rate)
}

fn fmt_rates(r: &[f64]) -> String {
    r.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

fn benchmark_bound(run: &BenchmarkRun) -> Result<String, String> {
    let (full, mean) = rates(run, Variant::Full);
    let detail = format!("full {} (mean {mean:.3})", fmt_rates(&full));
    check(full.len() == 5 && full.iter().all(|&r| r >= 0.80), detail.clone())?;
    Ok(detail)
}

fn ablation_direction(run: &BenchmarkRun) -> Result<String, String> {
    let (full, mf) = rates(run, Variant::Full);
    let (nofeas, mn) = rates(run, Variant::WithoutFeasibility);
    let (_, mo) = rates(run, Variant::WithoutOptimalSelection);
    let lower = full.iter().zip(&nofeas).filter(|(f, n)| n < f).count();
    let detail = format!(
        "w/o-feasibility {} lower on {lower}/5; means full {mf:.3}, w/o-opt {mo:.3}, w/o-feas {mn:.3}",
        fmt_rates(&nofeas)
    );
    check(lower >= 4 && mn < mf && mn < mo && mo < mf, detail.clone())?;
    Ok(detail)
}

fn gate_invariant(run: &BenchmarkRun) -> Result<String, String> {
    let online = run.metrics.gate_violations();
    check(online == 0, format!("{online} violations online"))?;
    let dir = std::env::temp_dir().join(format!("taskloop-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("traces.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| e.to_string())?);
    write_jsonl(&mut f, &run.traces).map_err(|e| e.to_string())?;
    drop(f);
    let out = Command::new(env!("CARGO_BIN_EXE_taskloop"))
        .arg("replay")
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().last().unwrap_or_default().to_string();
    check(out.status.success() && summary.ends_with(" 0 violations"), format!("replay: {summary}"))?;
    Ok(format!("{} episodes, 0 online; replay: {summary}", run.traces.len()))
}

fn brute_select(c: &[Candidate], feas: bool, opt: bool) -> String {
    let parsed: Vec<usize> = (0..c.len()).filter(|&i| c[i].action.is_some()).collect();
    if parsed.is_empty() {
        return "(alert)".into();
    }
    let argmax = |pool: Vec<usize>| -> Option<usize> {
        let top = pool.iter().map(|&i| c[i].logprob_sum).fold(f64::NEG_INFINITY, f64::max);
        pool.into_iter().find(|&i| c[i].logprob_sum == top)
    };
    let feasible: Vec<usize> = parsed.iter().copied().filter(|&i| c[i].feasible).collect();
    let pick = match (feas, opt) {
        (true, true) => Some(parsed[0]),
        (true, false) => argmax(parsed.clone()),
        (false, true) => feasible.first().copied(),
        (false, false) => argmax(feasible),
    };
    if let Some(i) = pick {
        return c[i].action.as_ref().unwrap().to_string();
    }
    match argmax(parsed.into_iter().filter(|&i| c[i].adjust_target.is_some()).collect()) {
        Some(i) => format!("(adjust {})", c[i].adjust_target.as_ref().unwrap()),
        None => "(alert)".into(),
    }
}

fn selection_property() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10_000 {
        let n = rng.gen_range(0..8);
        let cands: Vec<Candidate> = (0..n)
            .map(|i| {
                let parsed = rng.gen_bool(0.8);
                let feasible = parsed && rng.gen_bool(0.5);
                let action = parsed.then(|| GroundAction::new("grasp", [format!("o{i}")]));
                Candidate {
                    raw_text: action.as_ref().map_or("???".into(), ToString::to_string),
                    action,
                    logprob_sum: -f64::from(rng.gen_range(0..5)) * 0.25,
                    feasible,
                    unmet: Vec::new(),
                    adjust_target: (parsed && !feasible && rng.gen_bool(0.5)).then(|| format!("o{i}")),
                }
            })
            .collect();
        for (feas, opt) in [(false, false), (true, false), (false, true), (true, true)] {
            let config = PlannerConfig {
                ablate_feasibility: feas,
                ablate_optimal_selection: opt,
                ..PlannerConfig::default()
            };
            let got = select(&cands, &config).action.to_string();
            let want = brute_select(&cands, feas, opt);
            check(got == want, format!("case {case} ({feas},{opt}): {got} vs {want}"))?;
        }
    }
    Ok("10000 lists x 4 rule variants equal".into())
}

fn promptable_atoms(world: &WorldState) -> Vec<GroundAtom> {
    let ids = world.object_ids();
    let mut out = Vec::new();
    for a in &ids {
        out.push(GroundAtom::new("holding", [a.as_str()]));
        out.push(GroundAtom::new("opened", [a.as_str()]));
        for b in ids.iter().filter(|b| *b != a) {
            out.push(GroundAtom::new("on", [a.as_str(), b.as_str()]));
            out.push(GroundAtom::new("in", [a.as_str(), b.as_str()]));
        }
    }
    out
}

fn promptable_soundness() -> Result<String, String> {
    let truthful = ScriptedBackend::new(0.0);
    let contrary = ScriptedBackend::new(1.0);
    let mut counts: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    let mut states_seen = 0;
    for name in CANONICAL_SCENES {
        let spec = SceneSpec::canonical(name).unwrap();
        for seed in 0..2 {
            let config = PlannerConfig {
                seed,
                epsilon: 0.0,
                p_fail: FailureRates::uniform(0.0),
                ..PlannerConfig::default()
            };
            let trace = run_episode(&spec, &spec.instruction, &config, &truthful).map_err(|e| e.to_string())?;
            let mut world = load_scene(&spec.clone().with_seed(seed).with_p_fail(config.p_fail)).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["execute"]));
            let mut states = vec![world.clone()];
            for s in trace.steps.iter().filter(|s| s.dispatched) {
                world = execute(&world, &s.chosen, &mut rng).0;
                states.push(world.clone());
            }
            for (t, w) in states.iter().enumerate() {
                states_seen += 1;
                let truth = ground_truth_atoms(w, &w.object_ids()).map_err(|e| e.to_string())?;
                let view = TruthView::of(w, &spec.goal);
                for (i, atom) in promptable_atoms(w).iter().enumerate() {
                    let rs = derive_seed(seed, &[name, &t.to_string(), &i.to_string()]);
                    let held = truth.contains(atom);
                    let a0 = eval_promptable(atom, &spec.instruction, &view, &truthful, rs).map_err(|e| e.to_string())?;
                    let a1 = eval_promptable(atom, &spec.instruction, &view, &contrary, rs).map_err(|e| e.to_string())?;
                    check(a0 == held, format!("{name} t{t}: {atom} answered {a0} at epsilon 0"))?;
                    check(a1 == !held, format!("{name} t{t}: {atom} not inverted at epsilon 1"))?;
                    counts.entry(atom.predicate.clone()).or_default()[usize::from(held)] += 1;
                }
            }
        }
    }
    let both_ways = counts.values().filter(|[f, t]| *f > 0 && *t > 0).count();
    check(counts.len() == 4 && both_ways == 4, format!("predicates exercised: {counts:?}"))?;
    let n: usize = counts.values().map(|[f, t]| f + t).sum();
    Ok(format!("{n} atoms over {states_seen} states; all four predicates seen true and false"))
}

fn remote_conformance() -> Result<String, String> {
    let endpoint = |url: String| EndpointConfig {
        backoff_ms: 5,
        ..EndpointConfig::new(url)
    };
    let req = BackendRequest::new(vec![Message::user("next?")]).with_candidates(4).with_logprobs();
    let toks: [&[(&str, f64)]; 4] = [
        &[("(move", -0.1), (" cup)", -0.2)],
        &[("(scan", -0.3), (" cup)", -0.1)],
        &[("(grasp", -0.9), (" cup)", -0.4)],
        &[("(stop)", -1.5)],
    ];
    let server = MockServer::start(vec![MockReply::candidates(&toks)]).map_err(|e| e.to_string())?;
    let b = HttpBackend::new(endpoint(server.base_url())).map_err(|e| e.to_string())?;
    let resp = b.complete(&req, &TruthView::empty()).map_err(|e| e.to_string())?;
    check(resp.candidates.len() == 4, format!("{} candidates", resp.candidates.len()))?;
    resp.validate(&req).map_err(|e| e.to_string())?;
    let sums: Vec<f64> = resp.candidates.iter().map(|c| c.logprob_sum()).collect();
    check(sums.iter().zip([-0.3, -0.4, -1.3, -1.5]).all(|(a, b)| (a - b).abs() < 1e-12), format!("sums {sums:?}"))?;

    let server = MockServer::start(vec![MockReply::status(503), MockReply::candidates(&toks)]).map_err(|e| e.to_string())?;
    let b = HttpBackend::new(endpoint(server.base_url())).map_err(|e| e.to_string())?;
    b.complete(&req, &TruthView::empty()).map_err(|e| format!("retry path: {e}"))?;
    check(server.requests().len() == 2, "503 was not retried once")?;

    let server = MockServer::start(vec![MockReply::status(401)]).map_err(|e| e.to_string())?;
    let b = HttpBackend::new(endpoint(server.base_url())).map_err(|e| e.to_string())?;
    let err = b.complete(&req, &TruthView::empty()).err();
    check(err == Some(OracleError::Auth(401)) && server.requests().len() == 1, format!("auth path: {err:?}"))?;
    Ok("4 candidates with logprobs; 503 retried once; 401 not retried".into())
}

fn diagnostics_recorded(run: &BenchmarkRun) -> Result<String, String> {
    let trace = &run.traces[0];
    let mut buf = Vec::new();
    write_jsonl(&mut buf, [trace]).map_err(|e| e.to_string())?;
    let mut steps = 0;
    for line in String::from_utf8_lossy(&buf).lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if v["kind"] == "step" {
            steps += 1;
            for phase in ["observe_ms", "propose_ms", "select_ms", "execute_ms"] {
                check(v["durations"][phase].is_number(), format!("step record lacks {phase}"))?;
            }
            check(v["logprob_spread"].is_number(), "step record lacks logprob_spread")?;
            let cands = v["candidates"].as_array().ok_or("no candidates")?;
            check(cands.iter().all(|c| c["logprob_sum"].is_number()), "candidate without logprob_sum")?;
        }
    }
    check(steps > 0, "no step records")?;
    let timed_steps = run.traces.iter().flat_map(|t| &t.steps).filter(|s| s.durations.total_ms() > 0.0).count();
    check(timed_steps > 0, "no step recorded a duration")?;
    let full = run.metrics.variant(Variant::Full).ok_or("no full config")?;
    let spread: Vec<String> = full.tasks.iter().map(|t| format!("{:.2}", t.mean_logprob_spread)).collect();
    Ok(format!(
        "per-phase durations and logprob spreads in every step record; mean spread per task {}",
        spread.join("/")
    ))
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    let secs = Duration::from_secs;

    let (res, t) = timed(pddl_fidelity);
    r.line(1, "PDDL fidelity", res, t, Some(secs(1)));
    let (res, t) = timed(oracle_plan);
    r.line(2, "oracle plan", res, t, Some(secs(5)));
    let (res, t) = timed(navigation_equivalence);
    r.line(3, "navigation equivalence", res, t, Some(secs(10)));
    let (res, t) = timed(retrieval_equivalence);
    r.line(4, "retrieval equivalence", res, t, Some(secs(5)));

    let (run, t) = timed(benchmark);
    match run {
        Ok(run) => {
            let n = run.traces.len();
            r.line(5, "benchmark bound", benchmark_bound(&run).map(|d| format!("{d}; {n} episodes")), t, Some(secs(120)));
            r.line(6, "ablation directionality", ablation_direction(&run), Duration::ZERO, None);
            let (res, t) = timed(|| gate_invariant(&run));
            r.line(7, "precondition gate", res, t, None);
            let (res, t) = timed(selection_property);
            r.line(8, "selection rule", res, t, None);
            let (res, t) = timed(promptable_soundness);
            r.line(9, "promptable soundness", res, t, None);
            let (res, t) = timed(remote_conformance);
            r.line(10, "remote backend conformance", res, t, None);
            r.line(11, "substituted diagnostics", diagnostics_recorded(&run), Duration::ZERO, None);
        }
        Err(e) => {
            for (n, name) in [(5, "benchmark bound"), (6, "ablation directionality"), (7, "precondition gate")] {
                r.line(n, name, Err(e.clone()), t, None);
            }
            let (res, t) = timed(selection_property);
            r.line(8, "selection rule", res, t, None);
            let (res, t) = timed(promptable_soundness);
            r.line(9, "promptable soundness", res, t, None);
            let (res, t) = timed(remote_conformance);
            r.line(10, "remote backend conformance", res, t, None);
            r.line(11, "substituted diagnostics", Err(e), Duration::ZERO, None);
        }
    }
    println!("acceptance: {} of 11 criteria failed", r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
