use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use taskloop::planner::{read_jsonl, run_scripted_benchmark, BenchmarkMetrics, PlannerConfig, Variant};
use taskloop::worldsim::{FailureRates, SceneSpec};

fn taskloop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskloop"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TASKLOOP_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_trace_and_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["run", "--scene", "place_box", "--backend", "scripted", "--seed", "7", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("out/run_place_box_seed7");
    for f in ["trace.jsonl", "summary.json", "manifest.json", "problems/step_001.pddl"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["success"], true);
    let traces = read_jsonl(fs::File::open(dir.join("trace.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(traces.len(), 1);
    assert!(stdout(&o).contains("success"));

    // the trace file is appended to, never truncated
    let again = taskloop(&["run", "--scene", "place_box", "--seed", "7", "--out", "out"], tmp.path());
    assert_eq!(again.status.code(), Some(0));
    let traces = read_jsonl(fs::File::open(dir.join("trace.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(traces.len(), 2);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["run", "--scene", "nosuch"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuch"));

    let o = taskloop(&["run", "--scene", "place_box", "--backend", "remote"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("endpoint"));

    let o = taskloop(&["run", "--scene", "place_box", "--epsilon", "1.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    let o = taskloop(&["run", "--scene", "place_box", "--frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    fs::write(tmp.path().join("bad.toml"), "seeed = 3\n").unwrap();
    let o = taskloop(&["run", "--scene", "place_box", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["benchmark", "--help"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in [
        "--scene", "--instruction", "--backend", "--endpoint", "--model", "--seed", "--seeds", "--k", "--horizon",
        "--epsilon", "--p-fail", "--ablate", "--out", "--config", "--no-timestamps",
    ] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "scene = [\"place_box\"]\nseed = 3\nout = \"from_file\"\n").unwrap();
    let o = taskloop(&["run", "--config", "c.toml", "--seed", "4"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("from_file/run_place_box_seed4").is_dir());
}

#[test]
fn no_timestamps_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = taskloop(
            &["run", "--scene", "take_pillbox", "--seed", "11", "--no-timestamps", "--out", out],
            tmp.path(),
        );
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    }
    for f in ["trace.jsonl", "summary.json", "manifest.json"] {
        let a = fs::read(tmp.path().join("a/run_take_pillbox_seed11").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b/run_take_pillbox_seed11").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn benchmark_outputs_round_trip_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(
        &["benchmark", "--seeds", "2", "--ablate", "all", "--seed", "5", "--no-timestamps", "--out", "out"],
        tmp.path(),
    );
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let text = stdout(&o);
    for label in ["full", "w/o-feasibility", "w/o-optimal-selection"] {
        assert!(text.lines().any(|l| l.starts_with(label)), "no {label} row");
    }
    let dir = tmp.path().join("out/benchmark_seed5");
    let parsed = BenchmarkMetrics::from_json(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();

    let tasks: Vec<SceneSpec> =
        taskloop::worldsim::CANONICAL_SCENES.iter().map(|n| SceneSpec::canonical(n).unwrap()).collect();
    let base = PlannerConfig {
        seed: 5,
        p_fail: FailureRates::uniform(0.05),
        record_timings: false,
        ..PlannerConfig::default()
    };
    let in_memory = run_scripted_benchmark(&tasks, 2, &base, &Variant::ALL).unwrap();
    assert_eq!(parsed, in_memory.metrics);

    let r = taskloop(&["replay", "out/benchmark_seed5/traces.jsonl"], tmp.path());
    assert_eq!(r.status.code(), Some(0), "{}", stdout(&r));
    assert!(stdout(&r).contains(" 0 violations"));
}

#[test]
fn single_seed_benchmark_is_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["benchmark", "--seeds", "1", "--scene", "place_box", "--out", "out"], tmp.path());
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    assert!(tmp.path().join("out/benchmark_seed0/metrics.json").exists());
    let o = taskloop(&["benchmark", "--seeds", "0", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_flags_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["run", "--scene", "place_box", "--seed", "1", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let path = tmp.path().join("out/run_place_box_seed1/trace.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replacen(r#""schema":"grasp""#, r#""schema":"place""#, 1);
    assert_ne!(tampered, text);
    fs::write(tmp.path().join("bad.jsonl"), tampered).unwrap();
    let r = taskloop(&["replay", "bad.jsonl"], tmp.path());
    assert_eq!(r.status.code(), Some(1));
    let r = taskloop(&["replay", "missing.jsonl"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn map_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let o = taskloop(&["map", "locate", "--query", "blue jacket"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    let o = taskloop(&["map", "build", "--scene", "take_jacket"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("runs/map.json").exists());
    let o = taskloop(&["map", "locate", "--query", "blue jacket"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("object blue_jacket centroid"), "{}", stdout(&o));

    let o = taskloop(&["map", "path", "--from", "1.0,1.0", "--query", "blue jacket"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("cost"));
    let o = taskloop(&["map", "path", "--from", "1.0,1.0", "--to", "1.1,1.0"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cost 0.000"), "{}", stdout(&o));
}

#[test]
fn validate_reports_counts_and_locations() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("room.pddl"), taskloop::pddl::CANONICAL_DOMAIN).unwrap();
    let o = taskloop(&["validate", "room.pddl"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("13 actions"));

    let bad = "(define (problem p) (:domain room)\n  (:objects cup - locatable)\n  (:init (on cup))\n  (:goal (holding cup)))\n";
    fs::write(tmp.path().join("bad.pddl"), bad).unwrap();
    let o = taskloop(&["validate", "bad.pddl"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.pddl:3:"), "{}", stderr(&o));
}
