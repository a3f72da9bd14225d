use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, verify_trace, ExecutionTrace, FailureCategory, PhaseDurations, PlannerConfig, PlannerError, Termination};
use crate::oracle::{Backend, ScriptedBackend};
use crate::worldsim::SceneSpec;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WithoutFeasibility,
    WithoutOptimalSelection,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::WithoutFeasibility, Variant::WithoutOptimalSelection];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutFeasibility => "w/o-feasibility",
            Variant::WithoutOptimalSelection => "w/o-optimal-selection",
        }
    }

    pub fn apply(self, base: &PlannerConfig) -> PlannerConfig {
        PlannerConfig {
            ablate_feasibility: self == Variant::WithoutFeasibility,
            ablate_optimal_selection: self == Variant::WithoutOptimalSelection,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureCounts {
    pub planning: usize,
    pub promptable: usize,
    pub grounding: usize,
}

impl FailureCounts {
    fn add(&mut self, c: FailureCategory) {
        match c {
            FailureCategory::Planning => self.planning += 1,
            FailureCategory::Promptable => self.promptable += 1,
            FailureCategory::Grounding => self.grounding += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.planning + self.promptable + self.grounding
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    /// Cause of each failed episode.
    pub episode_failures: FailureCounts,
    /// Category of every step that recorded one.
    pub step_failures: FailureCounts,
    /// Of episodes the executor ended on the goal, the share where the
    /// planner also chose stop.
    pub stop_agreement: f64,
    pub mean_durations: PhaseDurations,
    pub mean_logprob_spread: f64,
    pub gate_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMetrics {
    pub variant: Variant,
    pub config: PlannerConfig,
    pub tasks: Vec<TaskMetrics>,
    pub mean_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub schema_version: u32,
    pub n_seeds: usize,
    pub configs: Vec<ConfigMetrics>,
}

pub struct BenchmarkRun {
    pub metrics: BenchmarkMetrics,
    pub traces: Vec<ExecutionTrace>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(task: &str, traces: &[&ExecutionTrace]) -> TaskMetrics {
    let episodes = traces.len();
    let successes = traces.iter().filter(|t| t.success).count();
    let mut episode_failures = FailureCounts::default();
    let mut step_failures = FailureCounts::default();
    let mut gate_violations = 0;
    for t in traces {
        if let (false, Some(c)) = (t.success, t.failure_cause) {
            episode_failures.add(c);
        }
        for s in &t.steps {
            if let Some(c) = s.failure_category {
                step_failures.add(c);
            }
        }
        if let Err(v) = verify_trace(t) {
            gate_violations += v.len();
        }
    }
    let goal_ended: Vec<&&ExecutionTrace> = traces.iter().filter(|t| t.termination == Termination::Goal).collect();
    let steps = || traces.iter().flat_map(|t| t.steps.iter());
    TaskMetrics {
        task: task.to_string(),
        episodes,
        successes,
        success_rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
        mean_steps: mean(traces.iter().map(|t| t.step_count as f64)),
        episode_failures,
        step_failures,
        stop_agreement: mean(goal_ended.iter().map(|t| if t.planner_stopped { 1.0 } else { 0.0 })),
        mean_durations: PhaseDurations {
            observe_ms: mean(steps().map(|s| s.durations.observe_ms)),
            propose_ms: mean(steps().map(|s| s.durations.propose_ms)),
            select_ms: mean(steps().map(|s| s.durations.select_ms)),
            execute_ms: mean(steps().map(|s| s.durations.execute_ms)),
        },
        mean_logprob_spread: mean(steps().map(|s| s.logprob_spread)),
        gate_violations,
    }
}

/// Runs `n_seeds` episodes of every task under every variant. Episode `i`
/// uses seed `base.seed + i`. Episodes run in parallel; results keep task
/// and seed order.
pub fn run_benchmark(
    tasks: &[SceneSpec],
    n_seeds: usize,
    base: &PlannerConfig,
    variants: &[Variant],
    backend_for: &(dyn Fn(&PlannerConfig) -> Box<dyn Backend> + Sync),
) -> Result<BenchmarkRun, PlannerError> {
    if n_seeds == 0 {
        return Err(PlannerError::Config("n_seeds must be at least 1".into()));
    }
    base.validate()?;
    let jobs: Vec<(Variant, usize, u64)> = variants
        .iter()
        .flat_map(|&v| (0..tasks.len()).flat_map(move |ti| (0..n_seeds as u64).map(move |i| (v, ti, i))))
        .collect();
    let traces: Vec<ExecutionTrace> = jobs
        .par_iter()
        .map(|&(v, ti, i)| {
            let config = PlannerConfig {
                seed: base.seed.wrapping_add(i),
                ..v.apply(base)
            };
            let backend = backend_for(&config);
            let scene = &tasks[ti];
            run_episode(scene, &scene.instruction, &config, backend.as_ref())
        })
        .collect::<Result<_, _>>()?;

    let mut by_variant: BTreeMap<Variant, Vec<TaskMetrics>> = BTreeMap::new();
    for (vi, &v) in variants.iter().enumerate() {
        for (ti, scene) in tasks.iter().enumerate() {
            let start = (vi * tasks.len() + ti) * n_seeds;
            let slice: Vec<&ExecutionTrace> = traces[start..start + n_seeds].iter().collect();
            by_variant.entry(v).or_default().push(summarize(&scene.name, &slice));
        }
    }
    let configs = variants
        .iter()
        .map(|&v| {
            let tasks = by_variant.remove(&v).unwrap_or_default();
            ConfigMetrics {
                variant: v,
                config: v.apply(base),
                mean_success_rate: mean(tasks.iter().map(|t| t.success_rate)),
                tasks,
            }
        })
        .collect();
    Ok(BenchmarkRun {
        metrics: BenchmarkMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            n_seeds,
            configs,
        },
        traces,
    })
}

/// Benchmark with the scripted backend at each config's epsilon.
pub fn run_scripted_benchmark(
    tasks: &[SceneSpec],
    n_seeds: usize,
    base: &PlannerConfig,
    variants: &[Variant],
) -> Result<BenchmarkRun, PlannerError> {
    run_benchmark(tasks, n_seeds, base, variants, &|c: &PlannerConfig| {
        Box::new(ScriptedBackend::new(c.epsilon)) as Box<dyn Backend>
    })
}

impl BenchmarkMetrics {
    pub fn variant(&self, v: Variant) -> Option<&ConfigMetrics> {
        self.configs.iter().find(|c| c.variant == v)
    }

    /// Whether the full configuration reaches `bound` on every task.
    pub fn full_meets(&self, bound: f64) -> bool {
        self.variant(Variant::Full)
            .is_some_and(|c| !c.tasks.is_empty() && c.tasks.iter().all(|t| t.success_rate >= bound))
    }

    pub fn gate_violations(&self) -> usize {
        self.configs.iter().flat_map(|c| &c.tasks).map(|t| t.gate_violations).sum()
    }

    /// Success rate per task and configuration.
    pub fn comparison_table(&self) -> String {
        let mut out = String::new();
        let tasks: Vec<&str> = self.configs.first().map(|c| c.tasks.iter().map(|t| t.task.as_str()).collect()).unwrap_or_default();
        let _ = write!(out, "{:<24}", "config");
        for t in &tasks {
            let _ = write!(out, "{t:>14}");
        }
        let _ = writeln!(out, "{:>10}", "mean");
        for c in &self.configs {
            let _ = write!(out, "{:<24}", c.variant.label());
            for t in &c.tasks {
                let _ = write!(out, "{:>14.2}", t.success_rate);
            }
            let _ = writeln!(out, "{:>10.3}", c.mean_success_rate);
        }
        out
    }

    /// Failed episodes by cause, per configuration and task.
    pub fn taxonomy_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24}{:<14}{:>10}{:>12}{:>11}{:>12}",
            "config", "task", "planning", "promptable", "grounding", "mean steps"
        );
        for c in &self.configs {
            for t in &c.tasks {
                let f = t.episode_failures;
                let _ = writeln!(
                    out,
                    "{:<24}{:<14}{:>10}{:>12}{:>11}{:>12.2}",
                    c.variant.label(),
                    t.task,
                    f.planning,
                    f.promptable,
                    f.grounding,
                    t.mean_steps
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
