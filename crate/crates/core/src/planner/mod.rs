//! The closed loop: observe, propose candidates, score and select one,
//! execute it, repeat.

mod bench;
mod trace;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{
    assemble_init, build_problem, extract_objects, generate_goal, select_predicates, Observation, PredicateRequest,
};
use crate::grounding::Grounder;
use crate::oracle::{
    derive_seed, render_prompt, slot_map, strip_feasibility, to_messages, Backend, BackendRequest, Message,
    OracleError, PromptTemplate, TruthView,
};
use crate::pddl::{
    canonical_domain, holds, instantiate, parse_formula, parse_ground_action, parse_problem_unchecked, print_domain,
    print_problem, DomainModel, Formula, GroundAction, PddlError, State,
};
use crate::worldsim::{execute, goal_satisfied, load_scene, ActionOutcome, FailureRates, SceneSpec, WorldError};

pub use bench::{
    run_benchmark, run_scripted_benchmark, BenchmarkMetrics, BenchmarkRun, ConfigMetrics, FailureCounts, TaskMetrics,
    Variant,
};
pub use trace::{read_jsonl, verify_trace, write_jsonl, ReplayReport, TraceRecord, Violation, TRACE_SCHEMA_VERSION};

/// Predicates whose absence `adjust` can fix.
pub const ADJUSTABLE_PREDICATES: [&str; 3] = ["reachable", "graspable", "placeable"];
/// Consecutive adjusts allowed on one target before escalating to alert.
pub const MAX_ADJUSTS: usize = 3;

const EXAMPLE_PROBLEM: &str = include_str!("../../assets/domain/example_problem.pddl");

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Pddl(#[from] PddlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub k_candidates: usize,
    pub horizon: usize,
    pub ablate_feasibility: bool,
    pub ablate_optimal_selection: bool,
    pub epsilon: f64,
    pub p_fail: FailureRates,
    pub seed: u64,
    /// Sampling temperature sent with planning requests.
    pub temperature: f64,
    /// Off gives byte-stable traces.
    pub record_timings: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k_candidates: 4,
            horizon: 20,
            ablate_feasibility: false,
            ablate_optimal_selection: false,
            epsilon: 0.05,
            p_fail: FailureRates::default(),
            seed: 0,
            temperature: 0.7,
            record_timings: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.k_candidates == 0 {
            return Err(PlannerError::Config("k_candidates must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(PlannerError::Config("horizon must be at least 1".into()));
        }
        if !unit(self.epsilon) {
            return Err(PlannerError::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !unit(self.p_fail.navigation) || !unit(self.p_fail.manipulation) {
            return Err(PlannerError::Config("failure rates must lie in [0, 1]".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PlannerError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// Domain shown to the planner under this configuration.
    pub fn planning_domain(&self) -> DomainModel {
        let d = canonical_domain();
        if self.ablate_feasibility {
            strip_feasibility(&d)
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    Planning,
    Promptable,
    Grounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub raw_text: String,
    pub action: Option<GroundAction>,
    pub logprob_sum: f64,
    pub feasible: bool,
    /// Precondition literals that failed, as text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmet: Vec<String>,
    /// Set when the only failures are adjustable predicates; names the
    /// object to adjust towards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjust_target: Option<String>,
}

impl Candidate {
    pub fn new(raw_text: impl Into<String>, logprob_sum: f64) -> Self {
        let raw_text = raw_text.into();
        Self {
            action: parse_ground_action(&raw_text),
            raw_text,
            logprob_sum,
            feasible: false,
            unmet: Vec::new(),
            adjust_target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionReason {
    /// Highest logprob among feasible candidates.
    Optimal,
    /// First feasible candidate in backend order.
    FirstFeasible,
    /// Highest logprob, feasibility ignored.
    Unchecked,
    /// First parsed candidate, both scores ignored.
    FirstParsed,
    /// Nothing feasible; a candidate only lacked adjustable predicates.
    Adjust,
    NoFeasible,
    NoParsed,
    AdjustLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub action: GroundAction,
    /// Candidate the action came from, if any.
    pub index: Option<usize>,
    pub reason: SelectionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub observe_ms: f64,
    pub propose_ms: f64,
    pub select_ms: f64,
    pub execute_ms: f64,
}

impl PhaseDurations {
    pub fn total_ms(&self) -> f64 {
        self.observe_ms + self.propose_ms + self.select_ms + self.execute_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub problem_text: String,
    pub candidates: Vec<Candidate>,
    pub chosen: GroundAction,
    pub selection: SelectionReason,
    /// False when the executor ended the episode on the goal without
    /// running the planner's choice.
    pub dispatched: bool,
    pub outcome: ActionOutcome,
    pub failure_category: Option<FailureCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub promptable_failures: Vec<String>,
    /// Max minus min logprob over parsed candidates.
    pub logprob_spread: f64,
    pub durations: PhaseDurations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stop,
    Alert,
    Goal,
    Horizon,
    /// Extraction, predicate selection or goal generation failed.
    Setup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub schema_version: u32,
    pub scene: String,
    pub instruction: String,
    pub config: PlannerConfig,
    /// Goal the planner worked towards.
    pub goal: Option<String>,
    pub goal_matches_scene: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_error: Option<String>,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub step_count: usize,
    pub termination: Termination,
    /// Whether the planner itself chose stop at the end.
    pub planner_stopped: bool,
    pub failure_cause: Option<FailureCategory>,
}

/// Unmet precondition literals of `action` in `init`.
fn unmet_literals(f: &Formula, init: &State, out: &mut Vec<(String, Option<String>)>) -> Result<(), PddlError> {
    match f {
        Formula::And(cs) => {
            for c in cs {
                unmet_literals(c, init, out)?;
            }
        }
        Formula::Atom(_) => {
            if !holds(f, init)? {
                let pred = match f {
                    Formula::Atom(a) => Some(a.predicate.clone()),
                    _ => None,
                };
                out.push((f.to_string(), pred));
            }
        }
        _ => {
            if !holds(f, init)? {
                out.push((f.to_string(), None));
            }
        }
    }
    Ok(())
}

/// Scores one candidate's feasibility against the step's init set and
/// fills in its unmet literals. Recovery actions are always feasible.
pub fn score_feasibility(domain: &DomainModel, c: &mut Candidate, init: &State) -> bool {
    c.unmet.clear();
    c.adjust_target = None;
    let Some(action) = &c.action else {
        c.feasible = false;
        return false;
    };
    if action.is_recovery() {
        c.feasible = true;
        return true;
    }
    let grounded = match instantiate(domain, action) {
        Ok(g) => g,
        Err(e) => {
            c.unmet.push(e.to_string());
            c.feasible = false;
            return false;
        }
    };
    let mut unmet = Vec::new();
    if let Err(e) = unmet_literals(&grounded.precondition, init, &mut unmet) {
        c.unmet.push(e.to_string());
        c.feasible = false;
        return false;
    }
    c.feasible = unmet.is_empty();
    let adjustable = !unmet.is_empty()
        && unmet
            .iter()
            .all(|(_, p)| p.as_deref().is_some_and(|p| ADJUSTABLE_PREDICATES.contains(&p)));
    if adjustable {
        let first = &unmet[0].0;
        c.adjust_target = parse_ground_action(first).and_then(|a| a.args.first().cloned());
    }
    c.unmet = unmet.into_iter().map(|(t, _)| t).collect();
    c.feasible
}

/// Index of the highest logprob among `idx`, lower index on ties.
fn argmax(cands: &[Candidate], idx: impl Iterator<Item = usize>) -> Option<usize> {
    idx.fold(None, |best: Option<usize>, i| match best {
        Some(b) if cands[b].logprob_sum >= cands[i].logprob_sum => Some(b),
        _ => Some(i),
    })
}

fn recovery(cands: &[Candidate], parsed: &[usize]) -> Selection {
    let adjustable = argmax(cands, parsed.iter().copied().filter(|&i| cands[i].adjust_target.is_some()));
    match adjustable {
        Some(i) => Selection {
            action: GroundAction::new("adjust", [cands[i].adjust_target.clone().expect("filtered")]),
            index: None,
            reason: SelectionReason::Adjust,
        },
        None => Selection {
            action: GroundAction::new("alert", Vec::<String>::new()),
            index: None,
            reason: SelectionReason::NoFeasible,
        },
    }
}

/// Picks the action to execute from scored candidates.
pub fn select(cands: &[Candidate], config: &PlannerConfig) -> Selection {
    let parsed: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].action.is_some()).collect();
    let pick = |i: usize, reason| Selection {
        action: cands[i].action.clone().expect("parsed"),
        index: Some(i),
        reason,
    };
    if parsed.is_empty() {
        return Selection {
            action: GroundAction::new("alert", Vec::<String>::new()),
            index: None,
            reason: SelectionReason::NoParsed,
        };
    }
    match (config.ablate_feasibility, config.ablate_optimal_selection) {
        (true, true) => pick(parsed[0], SelectionReason::FirstParsed),
        (true, false) => pick(
            argmax(cands, parsed.iter().copied()).expect("nonempty"),
            SelectionReason::Unchecked,
        ),
        (false, true) => match parsed.iter().copied().find(|&i| cands[i].feasible) {
            Some(i) => pick(i, SelectionReason::FirstFeasible),
            None => recovery(cands, &parsed),
        },
        (false, false) => match argmax(cands, parsed.iter().copied().filter(|&i| cands[i].feasible)) {
            Some(i) => pick(i, SelectionReason::Optimal),
            None => recovery(cands, &parsed),
        },
    }
}

/// Example problem shown in the environment prompt, trimmed to the
/// predicates of `domain`.
pub fn example_problem(domain: &DomainModel) -> String {
    let mut p = parse_problem_unchecked(EXAMPLE_PROBLEM).expect("shipped example parses");
    p.init.retain(|a| domain.predicate(&a.predicate).is_some());
    print_problem(&p)
}

/// Conversation sent for one planning step.
pub fn planner_messages(
    domain: &DomainModel,
    problem_text: &str,
    instruction: &str,
    last_action: Option<&GroundAction>,
) -> Result<Vec<Message>, OracleError> {
    let mut messages = to_messages(&render_prompt(PromptTemplate::PlannerSystem, &slot_map([]))?);
    messages.extend(to_messages(&render_prompt(
        PromptTemplate::PlannerEnv,
        &slot_map([
            ("DOMAIN", print_domain(domain)),
            ("PROBLEM_EXAMPLE", example_problem(domain)),
        ]),
    )?));
    let last = last_action.map_or_else(|| "None".to_string(), ToString::to_string);
    messages.push(Message::user(render_prompt(
        PromptTemplate::PlannerObs,
        &slot_map([
            ("INSTRUCTION", instruction.to_string()),
            ("ACTION", last),
            ("OBSERVATION", problem_text.to_string()),
        ]),
    )?));
    Ok(messages)
}

/// Parameters of one planning request beyond the prompt contents.
#[derive(Debug, Clone, Copy)]
pub struct ProposeSettings {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
}

/// Asks the backend for K next actions.
pub fn propose(
    backend: &dyn Backend,
    domain: &DomainModel,
    problem_text: &str,
    instruction: &str,
    last_action: Option<&GroundAction>,
    settings: ProposeSettings,
    view: &TruthView,
) -> Result<Vec<Candidate>, OracleError> {
    let req = BackendRequest::new(planner_messages(domain, problem_text, instruction, last_action)?)
        .with_candidates(settings.k)
        .with_logprobs()
        .with_temperature(settings.temperature)
        .with_seed(settings.seed);
    let resp = backend.complete(&req, view)?;
    Ok(resp
        .candidates
        .iter()
        .map(|c| Candidate::new(c.text.clone(), c.logprob_sum()))
        .collect())
}

fn logprob_spread(cands: &[Candidate]) -> f64 {
    let lps: Vec<f64> = cands.iter().filter(|c| c.action.is_some()).map(|c| c.logprob_sum).collect();
    if lps.len() < 2 {
        return 0.0;
    }
    let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = lps.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

struct Clock(bool);

impl Clock {
    fn time<T>(&self, slot: &mut f64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.0 {
            *slot = start.elapsed().as_secs_f64() * 1e3;
        }
        out
    }
}

/// Runs one closed-loop episode. Setup and runtime failures end up in the
/// trace; only an invalid config or scene is an error.
pub fn run_episode(
    scene: &SceneSpec,
    instruction: &str,
    config: &PlannerConfig,
    backend: &dyn Backend,
) -> Result<ExecutionTrace, PlannerError> {
    config.validate()?;
    let spec = scene.clone().with_seed(config.seed).with_p_fail(config.p_fail);
    let mut world = load_scene(&spec)?;
    let scene_goal = parse_formula(&spec.goal, Some(&canonical_domain()))?;
    let domain = config.planning_domain();
    let seed = config.seed;
    let mut trace = ExecutionTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        scene: spec.name.clone(),
        instruction: instruction.to_string(),
        config: config.clone(),
        goal: None,
        goal_matches_scene: false,
        setup_error: None,
        steps: Vec::new(),
        success: false,
        step_count: 0,
        termination: Termination::Setup,
        planner_stopped: false,
        failure_cause: None,
    };

    let view = TruthView::of(&world, &spec.goal);
    let setup = (|| -> Result<_, String> {
        let objects = extract_objects(instruction, backend, &view, derive_seed(seed, &["extract"]))
            .map_err(|e| e.to_string())?;
        let goal = generate_goal(instruction, &domain, backend, &view, derive_seed(seed, &["goal"]))
            .map_err(|e| e.to_string())?;
        let requests = select_predicates(instruction, &objects, &domain, backend, &view, derive_seed(seed, &["select"]))
            .map_err(|e| e.to_string())?;
        Ok((objects.all(), goal, requests))
    })();
    let (objects, goal, requests): (Vec<String>, Formula, Vec<PredicateRequest>) = match setup {
        Ok(s) => s,
        Err(e) => {
            trace.setup_error = Some(e);
            trace.failure_cause = Some(FailureCategory::Planning);
            trace.success = goal_satisfied(&world, &scene_goal);
            return Ok(trace);
        }
    };
    trace.goal = Some(goal.to_string());
    trace.goal_matches_scene = goal == scene_goal;

    let grounder = Grounder::for_world(&world);
    let clock = Clock(config.record_timings);
    let mut exec_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["execute"]));
    let mut last_action: Option<GroundAction> = None;
    let mut adjust_streak: Option<(String, usize)> = None;
    trace.termination = Termination::Horizon;

    for t in 1..=config.horizon {
        let step_tag = t.to_string();
        let mut durations = PhaseDurations::default();
        let goal_reached = goal_satisfied(&world, &scene_goal);

        let observed = clock.time(&mut durations.observe_ms, || {
            let view = TruthView::of(&world, &spec.goal);
            let report = assemble_init(
                &requests,
                &Observation {
                    world: &world,
                    grounder: &grounder,
                    backend,
                    view: &view,
                    instruction,
                    seed: derive_seed(seed, &["observe", &step_tag]),
                },
            );
            let built = build_problem(&format!("{}_step{t}", spec.name), &objects, &report.init, &goal, &domain);
            (view, report, built)
        });
        let (view, report, built) = observed;
        let promptable_failures: Vec<String> = report
            .promptable_failures
            .iter()
            .map(|(a, e)| format!("{a}: {e}"))
            .collect();
        let (problem_text, mut candidates, mut detail) = match built {
            Ok((_, text)) => {
                let proposed = clock.time(&mut durations.propose_ms, || {
                    propose(
                        backend,
                        &domain,
                        &text,
                        instruction,
                        last_action.as_ref(),
                        ProposeSettings {
                            k: config.k_candidates,
                            temperature: config.temperature,
                            seed: derive_seed(seed, &["propose", &step_tag]),
                        },
                        &view,
                    )
                });
                match proposed {
                    Ok(c) if c.is_empty() => (text, c, Some("backend returned no candidates".to_string())),
                    Ok(c) => (text, c, None),
                    Err(e) => (text, Vec::new(), Some(format!("backend: {e}"))),
                }
            }
            Err(e) => (String::new(), Vec::new(), Some(e.to_string())),
        };

        let mut selection = clock.time(&mut durations.select_ms, || {
            for c in candidates.iter_mut() {
                score_feasibility(&domain, c, &report.init);
            }
            select(&candidates, config)
        });
        if selection.action.schema == "adjust" {
            let target = selection.action.args.first().cloned().unwrap_or_default();
            let count = match &adjust_streak {
                Some((prev, n)) if *prev == target => n + 1,
                _ => 1,
            };
            if count > MAX_ADJUSTS {
                selection = Selection {
                    action: GroundAction::new("alert", Vec::<String>::new()),
                    index: None,
                    reason: SelectionReason::AdjustLimit,
                };
                adjust_streak = None;
            } else {
                adjust_streak = Some((target, count));
            }
        } else {
            adjust_streak = None;
        }

        let chosen = selection.action.clone();
        let dispatched = !goal_reached || chosen.schema == "stop";
        let outcome = if dispatched {
            clock.time(&mut durations.execute_ms, || {
                let (next, outcome) = execute(&world, &chosen, &mut exec_rng);
                world = next;
                outcome
            })
        } else {
            ActionOutcome::success()
        };

        let failure_category = match selection.reason {
            SelectionReason::NoParsed | SelectionReason::NoFeasible => Some(FailureCategory::Planning),
            SelectionReason::AdjustLimit => Some(FailureCategory::Grounding),
            _ if !outcome.is_success() => Some(if promptable_failures.is_empty() {
                FailureCategory::Grounding
            } else {
                FailureCategory::Promptable
            }),
            _ => None,
        };
        if let Some(reason) = outcome.failure_reason {
            detail.get_or_insert_with(|| format!("{reason:?}"));
        }
        if failure_category.is_some() {
            trace.failure_cause = failure_category;
        }
        trace.steps.push(StepRecord {
            step: t,
            problem_text,
            logprob_spread: logprob_spread(&candidates),
            candidates,
            chosen: chosen.clone(),
            selection: selection.reason,
            dispatched,
            outcome,
            failure_category,
            failure_detail: detail,
            promptable_failures,
            durations,
        });
        trace.step_count = t;
        last_action = Some(chosen.clone());

        if goal_reached {
            trace.termination = Termination::Goal;
            trace.planner_stopped = chosen.schema == "stop";
            break;
        }
        match chosen.schema.as_str() {
            "stop" => {
                trace.termination = Termination::Stop;
                trace.planner_stopped = true;
                break;
            }
            "alert" => {
                trace.termination = Termination::Alert;
                break;
            }
            _ => {}
        }
    }

    trace.success = goal_satisfied(&world, &scene_goal);
    if trace.success {
        trace.failure_cause = None;
    } else if !trace.goal_matches_scene || trace.failure_cause.is_none() {
        trace.failure_cause = Some(FailureCategory::Planning);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(text: &str, lp: f64, feasible: bool) -> Candidate {
        let mut c = Candidate::new(text, lp);
        c.feasible = feasible && c.action.is_some();
        c
    }

    #[test]
    fn selection_examples() {
        let cfg = PlannerConfig::default();
        let s = select(&[cand("(grasp a)", -1.2, true), cand("(grasp b)", -0.4, true)], &cfg);
        assert_eq!(s.action.to_string(), "(grasp b)");
        let s = select(&[cand("(grasp c)", -0.1, false), cand("(grasp a)", -1.2, true)], &cfg);
        assert_eq!(s.action.to_string(), "(grasp a)");
        let s = select(&[cand("let me think...", -0.1, false)], &cfg);
        assert_eq!(s.reason, SelectionReason::NoParsed);
        assert_eq!(s.action.schema, "alert");
        let tie = select(&[cand("(grasp a)", -1.0, true), cand("(grasp b)", -1.0, true)], &cfg);
        assert_eq!(tie.index, Some(0));
    }

    #[test]
    fn unreachable_grasp_adjusts() {
        let d = canonical_domain();
        let init: State = ["find x", "at x", "detected x", "graspable x"]
            .iter()
            .map(|s| {
                let mut it = s.split(' ');
                crate::pddl::GroundAtom::new(it.next().unwrap(), it)
            })
            .collect();
        let mut c = Candidate::new("(grasp x)", -0.3);
        assert!(!score_feasibility(&d, &mut c, &init));
        assert_eq!(c.adjust_target.as_deref(), Some("x"));
        let s = select(&[c], &PlannerConfig::default());
        assert_eq!(s.action.to_string(), "(adjust x)");
        let mut m = Candidate::new("(move x)", -0.1);
        assert!(!score_feasibility(&d, &mut m, &State::new()));
        assert!(m.adjust_target.is_none());
        let mut stop = Candidate::new("(stop)", -5.0);
        assert!(score_feasibility(&d, &mut stop, &State::new()));
    }

    #[test]
    fn config_bounds() {
        assert!(PlannerConfig::default().validate().is_ok());
        let bad = PlannerConfig {
            k_candidates: 0,
            ..PlannerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig {
            epsilon: 1.5,
            ..PlannerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn example_problem_follows_domain() {
        let full = example_problem(&canonical_domain());
        assert!(full.contains("(graspable paper_box)"));
        let stripped = example_problem(&strip_feasibility(&canonical_domain()));
        assert!(!stripped.contains("graspable"));
    }
}
