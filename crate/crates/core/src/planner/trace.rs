use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{score_feasibility, Candidate, ExecutionTrace, FailureCategory, PlannerConfig, StepRecord, Termination};
use crate::pddl::{applicable, parse_problem};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scene: String,
    pub instruction: String,
    pub config: PlannerConfig,
    pub goal: Option<String>,
    pub goal_matches_scene: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub success: bool,
    pub step_count: usize,
    pub termination: Termination,
    pub planner_stopped: bool,
    pub failure_cause: Option<FailureCategory>,
}

/// One line of a trace file. An episode is a header, its steps, then a
/// summary; files may hold many episodes back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Step(StepRecord),
    Summary(TraceSummary),
}

impl ExecutionTrace {
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Header(TraceHeader {
            schema_version: self.schema_version,
            scene: self.scene.clone(),
            instruction: self.instruction.clone(),
            config: self.config.clone(),
            goal: self.goal.clone(),
            goal_matches_scene: self.goal_matches_scene,
            setup_error: self.setup_error.clone(),
        })];
        out.extend(self.steps.iter().cloned().map(TraceRecord::Step));
        out.push(TraceRecord::Summary(TraceSummary {
            success: self.success,
            step_count: self.step_count,
            termination: self.termination,
            planner_stopped: self.planner_stopped,
            failure_cause: self.failure_cause,
        }));
        out
    }
}

pub fn write_jsonl<'a>(out: &mut impl Write, traces: impl IntoIterator<Item = &'a ExecutionTrace>) -> std::io::Result<()> {
    for t in traces {
        for r in t.records() {
            serde_json::to_writer(&mut *out, &r)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {msg}"))
}

pub fn read_jsonl(input: impl BufRead) -> std::io::Result<Vec<ExecutionTrace>> {
    let mut traces = Vec::new();
    let mut open: Option<ExecutionTrace> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| bad(n, e))?;
        match record {
            TraceRecord::Header(h) => {
                if open.is_some() {
                    return Err(bad(n, "header inside an unfinished episode"));
                }
                if h.schema_version != TRACE_SCHEMA_VERSION {
                    return Err(bad(n, format!("unsupported schema version {}", h.schema_version)));
                }
                open = Some(ExecutionTrace {
                    schema_version: h.schema_version,
                    scene: h.scene,
                    instruction: h.instruction,
                    config: h.config,
                    goal: h.goal,
                    goal_matches_scene: h.goal_matches_scene,
                    setup_error: h.setup_error,
                    steps: Vec::new(),
                    success: false,
                    step_count: 0,
                    termination: Termination::Setup,
                    planner_stopped: false,
                    failure_cause: None,
                });
            }
            TraceRecord::Step(s) => open.as_mut().ok_or_else(|| bad(n, "step before header"))?.steps.push(s),
            TraceRecord::Summary(s) => {
                let mut t = open.take().ok_or_else(|| bad(n, "summary before header"))?;
                t.success = s.success;
                t.step_count = s.step_count;
                t.termination = s.termination;
                t.planner_stopped = s.planner_stopped;
                t.failure_cause = s.failure_cause;
                traces.push(t);
            }
        }
    }
    if open.is_some() {
        return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "episode without summary"));
    }
    Ok(traces)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReplayReport {
    pub steps: usize,
    pub dispatched: usize,
    /// Dispatched non-recovery actions checked against their init set.
    pub gated: usize,
}

/// Re-checks a trace offline: step bookkeeping, that each choice came
/// from the candidates or is a recovery action, that recorded feasibility
/// matches a fresh evaluation, and the precondition gate.
pub fn verify_trace(trace: &ExecutionTrace) -> Result<ReplayReport, Vec<Violation>> {
    let domain = trace.config.planning_domain();
    let mut report = ReplayReport::default();
    let mut violations = Vec::new();
    let mut flag = |step: usize, message: String| violations.push(Violation { step, message });
    if trace.step_count != trace.steps.len() {
        flag(0, format!("step_count {} but {} steps", trace.step_count, trace.steps.len()));
    }
    if trace.step_count > trace.config.horizon {
        flag(0, format!("step_count {} exceeds horizon {}", trace.step_count, trace.config.horizon));
    }
    for (i, s) in trace.steps.iter().enumerate() {
        report.steps += 1;
        if s.step != i + 1 {
            flag(s.step, format!("expected step {}", i + 1));
        }
        let from_candidates = s.candidates.iter().any(|c| c.action.as_ref() == Some(&s.chosen));
        if !from_candidates && !s.chosen.is_recovery() {
            flag(s.step, format!("{} is neither a candidate nor a recovery action", s.chosen));
        }
        if s.dispatched {
            report.dispatched += 1;
        }
        if s.problem_text.is_empty() {
            if !s.candidates.is_empty() {
                flag(s.step, "candidates without a problem".into());
            }
            continue;
        }
        let problem = match parse_problem(&s.problem_text, &domain) {
            Ok(p) => p,
            Err(e) => {
                flag(s.step, format!("problem does not parse: {e}"));
                continue;
            }
        };
        for (ci, c) in s.candidates.iter().enumerate() {
            let mut fresh = Candidate::new(c.raw_text.clone(), c.logprob_sum);
            score_feasibility(&domain, &mut fresh, &problem.init);
            if fresh.action != c.action || fresh.feasible != c.feasible {
                flag(s.step, format!("candidate {ci} feasibility does not reproduce"));
            }
        }
        if s.dispatched && !s.chosen.is_recovery() && !trace.config.ablate_feasibility {
            report.gated += 1;
            if !applicable(&domain, &s.chosen, &problem.init).unwrap_or(false) {
                flag(s.step, format!("dispatched {} with failing preconditions", s.chosen));
            }
        }
    }
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(violations)
    }
}
