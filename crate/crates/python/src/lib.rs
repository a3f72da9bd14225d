//! Python bindings: PDDL parsing and search, scene episodes, benchmarks
//! and map queries.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use taskloop_core::grounding::{locate as locate_query, occupancy_map};
use taskloop_core::oracle::{render_named, ScriptedBackend};
use taskloop_core::pddl::{self, DomainModel, ProblemModel};
use taskloop_core::planner::{self, ExecutionTrace, PlannerConfig, Variant};
use taskloop_core::worldsim::{self, FailureRates, SceneSpec, CANONICAL_SCENES};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: DomainModel,
}

#[pymethods]
impl PyDomain {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: pddl::parse_domain(text).map_err(value_err)?,
        })
    }

    /// The built-in room domain.
    #[staticmethod]
    fn canonical() -> Self {
        Self {
            inner: pddl::canonical_domain(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions.iter().map(|a| a.name.clone()).collect()
    }

    #[getter]
    fn predicates(&self) -> Vec<String> {
        self.inner.predicates.iter().map(|p| p.name.clone()).collect()
    }

    fn to_pddl(&self) -> String {
        pddl::print_domain(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Domain({:?}, {} actions, {} predicates)",
            self.inner.name,
            self.inner.actions.len(),
            self.inner.predicates.len()
        )
    }
}

#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: ProblemModel,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(text: &str, domain: &PyDomain) -> PyResult<Self> {
        Ok(Self {
            inner: pddl::parse_problem(text, &domain.inner).map_err(value_err)?,
        })
    }

    #[getter]
    fn objects(&self) -> Vec<String> {
        self.inner.object_names().map(str::to_string).collect()
    }

    #[getter]
    fn init(&self) -> Vec<String> {
        self.inner.init.iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn goal(&self) -> String {
        self.inner.goal.to_string()
    }

    fn to_pddl(&self) -> String {
        pddl::print_problem(&self.inner)
    }

    /// Whether `action`, e.g. `"(grasp box)"`, is applicable in the init state.
    fn applicable(&self, domain: &PyDomain, action: &str) -> PyResult<bool> {
        let a = pddl::parse_ground_action(action).ok_or_else(|| value_err(format!("cannot parse {action:?}")))?;
        pddl::applicable(&domain.inner, &a, &self.inner.init).map_err(value_err)
    }
}

/// Shortest plan by breadth-first search, or None when the goal is
/// unreachable within the budget.
#[pyfunction]
#[pyo3(signature = (domain, problem, budget = 100_000))]
fn forward_search(domain: &PyDomain, problem: &PyProblem, budget: usize) -> PyResult<Option<Vec<String>>> {
    let out = pddl::forward_search(&domain.inner, &problem.inner, budget).map_err(value_err)?;
    Ok(out.plan().map(|p| p.iter().map(ToString::to_string).collect()))
}

#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: ExecutionTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn success(&self) -> bool {
        self.inner.success
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step_count
    }

    #[getter]
    fn scene(&self) -> String {
        self.inner.scene.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.steps.iter().map(|s| s.chosen.to_string()).collect()
    }

    #[getter]
    fn rewards(&self) -> Vec<u8> {
        self.inner.steps.iter().map(|s| s.outcome.reward).collect()
    }

    /// Newline-delimited JSON records, as written by the command line.
    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        planner::write_jsonl(&mut buf, [&self.inner]).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    /// Number of invariant violations found by an offline re-check.
    fn verify(&self) -> usize {
        planner::verify_trace(&self.inner).err().map_or(0, |v| v.len())
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace({:?}, success={}, steps={})",
            self.inner.scene, self.inner.success, self.inner.step_count
        )
    }
}

fn scene_spec(name: &str) -> PyResult<SceneSpec> {
    SceneSpec::canonical(name).map_err(value_err)
}

#[allow(clippy::too_many_arguments)]
fn config(
    seed: u64,
    epsilon: f64,
    p_fail: f64,
    k: usize,
    horizon: usize,
    ablate_feasibility: bool,
    ablate_optimal_selection: bool,
) -> PyResult<PlannerConfig> {
    let c = PlannerConfig {
        seed,
        epsilon,
        p_fail: FailureRates::uniform(p_fail),
        k_candidates: k,
        horizon,
        ablate_feasibility,
        ablate_optimal_selection,
        record_timings: false,
        ..PlannerConfig::default()
    };
    c.validate().map_err(value_err)?;
    Ok(c)
}

/// Runs one episode of a shipped scene with the scripted backend.
#[pyfunction]
#[pyo3(signature = (scene, seed = 0, epsilon = 0.05, p_fail = 0.05, k = 4, horizon = 20,
                    ablate_feasibility = false, ablate_optimal_selection = false, instruction = None))]
#[allow(clippy::too_many_arguments)]
fn run_episode(
    py: Python<'_>,
    scene: &str,
    seed: u64,
    epsilon: f64,
    p_fail: f64,
    k: usize,
    horizon: usize,
    ablate_feasibility: bool,
    ablate_optimal_selection: bool,
    instruction: Option<String>,
) -> PyResult<PyTrace> {
    let spec = scene_spec(scene)?;
    let cfg = config(seed, epsilon, p_fail, k, horizon, ablate_feasibility, ablate_optimal_selection)?;
    let instruction = instruction.unwrap_or_else(|| spec.instruction.clone());
    let trace = py
        .detach(|| planner::run_episode(&spec, &instruction, &cfg, &ScriptedBackend::new(cfg.epsilon)))
        .map_err(value_err)?;
    Ok(PyTrace { inner: trace })
}

/// Benchmark over the shipped scenes; returns the metrics as a dict.
#[pyfunction]
#[pyo3(signature = (n_seeds, scenes = None, seed = 0, epsilon = 0.05, p_fail = 0.05, k = 4, horizon = 20,
                    ablations = true))]
#[allow(clippy::too_many_arguments)]
fn run_benchmark<'py>(
    py: Python<'py>,
    n_seeds: usize,
    scenes: Option<Vec<String>>,
    seed: u64,
    epsilon: f64,
    p_fail: f64,
    k: usize,
    horizon: usize,
    ablations: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let names = scenes.unwrap_or_else(|| CANONICAL_SCENES.iter().map(|s| s.to_string()).collect());
    let tasks = names.iter().map(|n| scene_spec(n)).collect::<PyResult<Vec<_>>>()?;
    let base = config(seed, epsilon, p_fail, k, horizon, false, false)?;
    let variants = if ablations { Variant::ALL.to_vec() } else { vec![Variant::Full] };
    let run = py
        .detach(|| planner::run_scripted_benchmark(&tasks, n_seeds, &base, &variants))
        .map_err(value_err)?;
    json_to_py(py, &run.metrics.to_json())
}

type Hit = (f64, f64, f64, f64, Option<String>);

/// Best map match for a text query in a scene: `(x, y, z, similarity,
/// object_id)`, or None below the match threshold.
#[pyfunction]
#[pyo3(signature = (scene, query, seed = 0))]
fn locate(scene: &str, query: &str, seed: u64) -> PyResult<Option<Hit>> {
    let world = worldsim::load_scene(&scene_spec(scene)?.with_seed(seed)).map_err(value_err)?;
    let map = occupancy_map(&world);
    Ok(locate_query(&map, query).map(|h| (h.position.x, h.position.y, h.position.z, h.similarity, h.object_id)))
}

/// Fills a prompt template by id.
#[pyfunction]
fn render_prompt(template: &str, slots: BTreeMap<String, String>) -> PyResult<String> {
    render_named(template, &slots).map_err(value_err)
}

#[pyfunction]
fn canonical_scenes() -> Vec<String> {
    CANONICAL_SCENES.iter().map(|s| s.to_string()).collect()
}

#[pymodule]
fn taskloop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(forward_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(locate, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_scenes, m)?)?;
    Ok(())
}
