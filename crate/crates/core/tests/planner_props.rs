use proptest::prelude::*;
use taskloop::oracle::{derive_seed, ScriptedBackend, TruthView, FEASIBILITY_PREDICATES};
use taskloop::pddl::{apply, applicable, canonical_domain, forward_search, parse_problem, GroundAction, GroundAtom, ProblemModel};
use taskloop::planner::{
    propose, read_jsonl, run_episode, run_scripted_benchmark, score_feasibility, select, verify_trace, BenchmarkMetrics,
    Candidate, ExecutionTrace, FailureCategory, PlannerConfig, ProposeSettings, SelectionReason, Termination, Variant,
};
use taskloop::worldsim::{FailureRates, SceneSpec, CANONICAL_SCENES};

fn cand(i: usize, parsed: bool, feasible: bool, lp: f64, adjust: Option<&str>) -> Candidate {
    let action = parsed.then(|| GroundAction::new("move", [format!("obj{i}")]));
    Candidate {
        raw_text: action.as_ref().map_or_else(|| "gibberish".to_string(), ToString::to_string),
        action,
        logprob_sum: lp,
        feasible: parsed && feasible,
        unmet: Vec::new(),
        adjust_target: if parsed && !feasible { adjust.map(str::to_string) } else { None },
    }
}

/// Expected (index, action schema or adjust target) by direct enumeration.
fn expected(cands: &[Candidate], ablate_feas: bool, ablate_opt: bool) -> (Option<usize>, String) {
    let parsed: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].action.is_some()).collect();
    if parsed.is_empty() {
        return (None, "alert".into());
    }
    let best = |pool: &[usize]| -> Option<usize> {
        let mut best: Option<usize> = None;
        for &i in pool {
            let beats = match best {
                None => true,
                Some(b) => cands[i].logprob_sum > cands[b].logprob_sum,
            };
            if beats {
                best = Some(i);
            }
        }
        best
    };
    let feasible: Vec<usize> = parsed.iter().copied().filter(|&i| cands[i].feasible).collect();
    let chosen = match (ablate_feas, ablate_opt) {
        (true, true) => Some(parsed[0]),
        (true, false) => best(&parsed),
        (false, true) => feasible.first().copied(),
        (false, false) => best(&feasible),
    };
    if let Some(i) = chosen {
        return (Some(i), cands[i].action.as_ref().unwrap().to_string());
    }
    let adjustable: Vec<usize> = parsed.iter().copied().filter(|&i| cands[i].adjust_target.is_some()).collect();
    match best(&adjustable) {
        Some(i) => (None, format!("(adjust {})", cands[i].adjust_target.as_ref().unwrap())),
        None => (None, "alert".into()),
    }
}

fn candidate_list() -> impl Strategy<Value = Vec<Candidate>> {
    // few distinct logprobs so ties are common
    let one = (any::<bool>(), any::<bool>(), 0..6i32, prop::option::of(prop::sample::select(vec!["table", "box"])));
    prop::collection::vec(one, 0..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, f, lp, adj))| cand(i, p || i % 3 == 0, f, -f64::from(lp) * 0.5, adj))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn selection_matches_brute_force(cands in candidate_list(), feas in any::<bool>(), opt in any::<bool>()) {
        let config = PlannerConfig {
            ablate_feasibility: feas,
            ablate_optimal_selection: opt,
            ..PlannerConfig::default()
        };
        let s = select(&cands, &config);
        let (index, action) = expected(&cands, feas, opt);
        prop_assert_eq!(s.index, index);
        let got = if s.action.schema == "alert" { "alert".to_string() } else { s.action.to_string() };
        prop_assert_eq!(got, action);
        if cands.iter().all(|c| c.action.is_none()) {
            prop_assert_eq!(s.reason, SelectionReason::NoParsed);
        }
    }
}

fn config(seed: u64, epsilon: f64, p_fail: f64) -> PlannerConfig {
    PlannerConfig {
        seed,
        epsilon,
        p_fail: FailureRates::uniform(p_fail),
        record_timings: false,
        ..PlannerConfig::default()
    }
}

fn episode(scene: &str, cfg: &PlannerConfig) -> ExecutionTrace {
    let spec = SceneSpec::canonical(scene).unwrap();
    run_episode(&spec, &spec.instruction, cfg, &ScriptedBackend::new(cfg.epsilon)).unwrap()
}

#[test]
fn episodes_are_deterministic() {
    for scene in CANONICAL_SCENES {
        let cfg = config(17, 0.05, 0.05);
        let a = episode(scene, &cfg);
        let b = episode(scene, &cfg);
        assert_eq!(a, b, "{scene}");
        let c = episode(scene, &config(18, 0.05, 0.05));
        assert_eq!(c.scene, a.scene);
    }
}

#[test]
fn place_box_oracle_episode() {
    let t = episode("place_box", &config(7, 0.0, 0.0));
    assert!(t.success);
    assert!(t.goal_matches_scene);
    assert_eq!(t.termination, Termination::Goal);
    assert!(t.planner_stopped);
    assert!(t.step_count <= 7, "{} steps", t.step_count);
    let schemas: Vec<&str> = t.steps.iter().filter(|s| !s.chosen.is_recovery()).map(|s| s.chosen.schema.as_str()).collect();
    // scan appears only when the box starts out undetected
    let without_scan: Vec<&str> = schemas.iter().copied().filter(|s| *s != "scan").collect();
    assert_eq!(without_scan, ["move", "grasp", "move", "place"]);
    assert!(schemas.len() <= 5);
    verify_trace(&t).unwrap();
}

#[test]
fn every_scene_succeeds_without_noise() {
    for scene in CANONICAL_SCENES {
        for seed in 0..5 {
            let t = episode(scene, &config(seed, 0.0, 0.0));
            assert!(t.success, "{scene} seed {seed}: {:?}", t.termination);
            assert!(t.failure_cause.is_none());
        }
    }
}

#[test]
fn horizon_one_truncates() {
    let cfg = PlannerConfig {
        horizon: 1,
        ..config(0, 0.0, 0.0)
    };
    let t = episode("place_box", &cfg);
    assert_eq!(t.step_count, 1);
    assert_eq!(t.termination, Termination::Horizon);
    assert!(!t.success);
    assert_eq!(t.failure_cause, Some(FailureCategory::Planning));
}

const WALLED: &str = r#"{
  "name": "walled_box",
  "instruction": "Pick the paper box on the wooden table and place it on the black table.",
  "goal": "(on paper_box black_table)",
  "room": { "width": 6.0, "depth": 6.0, "height": 2.5 },
  "robot": { "x": 1.0, "y": 1.0, "heading": 0.0 },
  "objects": [
    { "id": "wooden_table", "label": "wooden table", "size": [1.2, 0.8, 0.7], "position": [1.5, 4.0], "surface": true },
    { "id": "paper_box", "label": "paper box", "size": [0.3, 0.2, 0.15], "on": "wooden_table", "offset": [0.0, 0.0], "movable": true },
    { "id": "black_table", "label": "black table", "size": [1.0, 0.7, 0.7], "position": [4.5, 3.0], "surface": true },
    { "id": "wall_w", "label": "wall", "size": [0.2, 2.2, 1.2], "position": [3.5, 3.0] },
    { "id": "wall_e", "label": "wall", "size": [0.2, 2.2, 1.2], "position": [5.5, 3.0] },
    { "id": "wall_n", "label": "wall", "size": [1.7, 0.2, 1.2], "position": [4.5, 4.0] },
    { "id": "wall_s", "label": "wall", "size": [1.7, 0.2, 1.2], "position": [4.5, 2.0] }
  ]
}"#;

#[test]
fn walled_off_target_alerts() {
    let spec = SceneSpec::from_json(WALLED).unwrap();
    for seed in 0..3 {
        let cfg = config(seed, 0.0, 0.0);
        let t = run_episode(&spec, &spec.instruction, &cfg, &ScriptedBackend::new(0.0)).unwrap();
        assert_eq!(t.termination, Termination::Alert, "seed {seed}");
        assert!(!t.success);
        let last = t.steps.last().unwrap();
        assert_eq!(last.chosen.schema, "alert");
        // never walked into the enclosure
        assert!(t.steps.iter().all(|s| s.chosen != GroundAction::new("move", ["black_table"]) || !s.dispatched));
    }
}

fn grant_feasibility(p: &mut ProblemModel) {
    let names: Vec<String> = p.object_names().map(str::to_string).collect();
    for o in &names {
        for pred in FEASIBILITY_PREDICATES {
            p.init.insert(GroundAtom::new(pred, [o.as_str()]));
        }
    }
}

fn distance(p: &ProblemModel) -> Option<usize> {
    forward_search(&canonical_domain(), p, 200_000).unwrap().plan().map(<[_]>::len)
}

/// With feasibility atoms granted, the chosen action should start a
/// shortest plan.
#[test]
fn policy_agrees_with_bfs() {
    let domain = canonical_domain();
    let full = PlannerConfig::default();
    let (mut agree, mut total) = (0, 0);
    for scene in CANONICAL_SCENES {
        for seed in 0..8 {
            let t = episode(scene, &config(seed, 0.0, 0.0));
            let mut last: Option<GroundAction> = None;
            for s in &t.steps {
                let prev = last.replace(s.chosen.clone());
                if s.problem_text.is_empty() {
                    continue;
                }
                let mut p = parse_problem(&s.problem_text, &domain).unwrap();
                grant_feasibility(&mut p);
                let Some(d0) = distance(&p) else { continue };
                let text = taskloop::pddl::print_problem(&p);
                let settings = ProposeSettings {
                    k: full.k_candidates,
                    temperature: full.temperature,
                    seed: derive_seed(seed, &["propose", &s.step.to_string()]),
                };
                let backend = ScriptedBackend::new(0.0);
                let mut cands =
                    propose(&backend, &domain, &text, &t.instruction, prev.as_ref(), settings, &TruthView::empty()).unwrap();
                for c in cands.iter_mut() {
                    score_feasibility(&domain, c, &p.init);
                }
                let chosen = select(&cands, &full).action;
                total += 1;
                let ok = if d0 == 0 {
                    chosen.schema == "stop"
                } else if applicable(&domain, &chosen, &p.init).unwrap_or(false) {
                    let mut next = p.clone();
                    next.init = apply(&domain, &chosen, &p.init).unwrap();
                    distance(&next) == Some(d0 - 1)
                } else {
                    false
                };
                if ok {
                    agree += 1;
                }
            }
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(total > 100, "only {total} steps");
    assert!(rate >= 0.95, "agreement {agree}/{total} = {rate:.3}");
}

#[test]
fn small_benchmark_keeps_the_gate() {
    let tasks: Vec<SceneSpec> = CANONICAL_SCENES.iter().map(|n| SceneSpec::canonical(n).unwrap()).collect();
    let base = config(100, 0.05, 0.05);
    let run = run_scripted_benchmark(&tasks, 4, &base, &Variant::ALL).unwrap();
    assert_eq!(run.traces.len(), 3 * 5 * 4);
    assert_eq!(run.metrics.gate_violations(), 0);
    for t in &run.traces {
        if !t.config.ablate_feasibility {
            let report = verify_trace(t).unwrap();
            assert_eq!(report.dispatched, t.steps.iter().filter(|s| s.dispatched).count());
        }
        assert!(t.step_count <= t.config.horizon);
    }
    for c in &run.metrics.configs {
        for m in &c.tasks {
            assert_eq!(m.episodes, 4);
            assert!(m.episode_failures.total() <= m.episodes - m.successes);
        }
    }

    let mut buf = Vec::new();
    taskloop::planner::write_jsonl(&mut buf, &run.traces).unwrap();
    let back = read_jsonl(&buf[..]).unwrap();
    assert_eq!(back, run.traces);

    let json = run.metrics.to_json();
    assert_eq!(BenchmarkMetrics::from_json(&json).unwrap(), run.metrics);
}

#[test]
fn benchmark_rejects_zero_seeds() {
    let tasks = vec![SceneSpec::canonical("place_box").unwrap()];
    assert!(run_scripted_benchmark(&tasks, 0, &PlannerConfig::default(), &[Variant::Full]).is_err());
}

#[test]
fn tampered_trace_is_flagged() {
    let mut t = episode("take_jacket", &config(2, 0.0, 0.0));
    let idx = t.steps.iter().position(|s| s.chosen.schema == "grasp").unwrap();
    t.steps[idx].chosen = GroundAction::new("place", ["blue_jacket", "door"]);
    let v = verify_trace(&t).unwrap_err();
    assert!(v.iter().any(|v| v.step == idx + 1));
}
