//! `taskloop` command line.
//!
//! Exit codes: 0 success; 1 task failure, failed check or internal error;
//! 2 bad arguments or configuration.

mod config;

use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;
use taskloop::geometry::Vec3;
use taskloop::grounding::{locate, occupancy_map, plan_path, SemanticVoxelMap};
use taskloop::oracle::Backend;
use taskloop::pddl::{canonical_domain, parse_domain, parse_problem};
use taskloop::planner::{read_jsonl, run_benchmark, run_episode, verify_trace, write_jsonl, ExecutionTrace, PlannerConfig};
use taskloop::worldsim::load_scene as build_world;

use config::{load_scene, CommonArgs, Settings};

/// Full-configuration success rate every task must reach for `benchmark`
/// to exit 0.
const SUCCESS_BOUND: f64 = 0.8;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failed(String),
    Internal(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Internal(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "taskloop", version, about = "Closed-loop PDDL task planning in a simulated room")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one episode and write its trace.
    Run(CommonArgs),
    /// Run seeded episodes for each task and configuration.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        /// Episodes per task and configuration.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Build and query voxel maps.
    Map {
        #[command(subcommand)]
        command: MapCommand,
    },
    /// Print a trace and re-check its invariants.
    Replay {
        trace: PathBuf,
        /// Also print each step's problem.
        #[arg(long)]
        problems: bool,
    },
    /// Parse a PDDL domain or problem and report diagnostics.
    Validate {
        file: PathBuf,
        /// Domain for checking a problem; defaults to the built-in one.
        #[arg(long)]
        domain: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum MapCommand {
    /// Write the map of a scene.
    Build {
        #[arg(long)]
        scene: String,
        /// Seeds the scene layout.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/map.json")]
        map: PathBuf,
    },
    /// Find the best match for a text query.
    Locate {
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "runs/map.json")]
        map: PathBuf,
    },
    /// Plan a floor path between two points, or to a queried object.
    Path {
        /// Start as `x,y` in meters.
        #[arg(long, value_parser = parse_point)]
        from: (f64, f64),
        /// Goal as `x,y` in meters.
        #[arg(long, value_parser = parse_point, conflicts_with = "query")]
        to: Option<(f64, f64)>,
        /// Goal object query.
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value = "runs/map.json")]
        map: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(x)?, p(y)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Benchmark { common, seeds } => cmd_benchmark(&common, seeds),
        Command::Map { command } => cmd_map(command),
        Command::Replay { trace, problems } => cmd_replay(&trace, problems),
        Command::Validate { file, domain } => cmd_validate(&file, domain.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes `manifest.json` listing the run directory's files.
fn write_manifest(dir: &Path, command: &str, files: &[String], settings: &Settings) -> anyhow::Result<()> {
    let mut m = json!({
        "schema_version": 1,
        "command": command,
        "backend": format!("{:?}", settings.backend).to_lowercase(),
        "files": files,
    });
    if settings.timestamps {
        m["created_unix"] = json!(unix_time());
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

fn append_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a ExecutionTrace>) -> anyhow::Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, traces)?;
    w.flush()?;
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(args, None, &[])?;
    if settings.scenes.len() != 1 {
        return Err(CliError::Config("run takes exactly one --scene".into()));
    }
    let scene = &settings.scenes[0];
    let instruction = settings.instruction.clone().unwrap_or_else(|| scene.instruction.clone());
    let backend = settings.backend_for(&settings.planner)?;
    let trace = run_episode(scene, &instruction, &settings.planner, backend.as_ref())
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut tag = format!("run_{}_seed{}", scene.name, settings.planner.seed);
    if settings.planner.ablate_feasibility {
        tag.push_str("_nofeas");
    }
    if settings.planner.ablate_optimal_selection {
        tag.push_str("_noopt");
    }
    let dir = settings.out.join(tag);
    let problems = dir.join("problems");
    fs::create_dir_all(&problems).with_context(|| format!("creating {}", problems.display()))?;
    append_traces(&dir.join("trace.jsonl"), [&trace])?;
    let mut files = vec!["trace.jsonl".to_string(), "summary.json".to_string()];
    for s in &trace.steps {
        if s.problem_text.is_empty() {
            continue;
        }
        let name = format!("step_{:03}.pddl", s.step);
        fs::write(problems.join(&name), &s.problem_text).context("writing problem")?;
        files.push(format!("problems/{name}"));
    }
    let summary = json!({
        "scene": trace.scene,
        "instruction": trace.instruction,
        "success": trace.success,
        "step_count": trace.step_count,
        "termination": trace.termination,
        "planner_stopped": trace.planner_stopped,
        "failure_cause": trace.failure_cause,
        "actions": trace.steps.iter().map(|s| s.chosen.to_string()).collect::<Vec<_>>(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).context("summary")? + "\n")
        .context("writing summary")?;
    write_manifest(&dir, "run", &files, &settings)?;

    for s in &trace.steps {
        println!(
            "{:>3} {:<36} reward {}{}",
            s.step,
            s.chosen.to_string(),
            s.outcome.reward,
            s.failure_category.map(|c| format!("  [{c:?}]").to_lowercase()).unwrap_or_default()
        );
    }
    println!(
        "{}: {} in {} steps ({:?}); trace in {}",
        trace.scene,
        if trace.success { "success" } else { "failure" },
        trace.step_count,
        trace.termination,
        dir.display()
    );
    if trace.success {
        Ok(())
    } else {
        Err(CliError::Failed("episode did not reach its goal".into()))
    }
}

fn cmd_benchmark(args: &CommonArgs, seeds: Option<usize>) -> Result<(), CliError> {
    let all: Vec<&str> = taskloop::worldsim::CANONICAL_SCENES.to_vec();
    let settings = Settings::resolve(args, seeds, &all)?;
    let mut tasks = settings.scenes.clone();
    if let Some(i) = &settings.instruction {
        tasks.iter_mut().for_each(|t| t.instruction = i.clone());
    }
    // fail fast on an unusable remote endpoint
    let probe = settings.backend_for(&settings.planner)?;
    drop(probe);
    let factory = |c: &PlannerConfig| -> Box<dyn Backend> {
        settings.backend_for(c).expect("backend settings validated above")
    };
    let run = run_benchmark(&tasks, settings.seeds, &settings.base_planner(), &settings.variants(), &factory)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let dir = settings.out.join(format!("benchmark_seed{}", settings.planner.seed));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let comparison = run.metrics.comparison_table();
    let taxonomy = run.metrics.taxonomy_table();
    fs::write(dir.join("metrics.json"), run.metrics.to_json() + "\n").context("writing metrics")?;
    fs::write(dir.join("comparison.txt"), &comparison).context("writing table")?;
    fs::write(dir.join("taxonomy.txt"), &taxonomy).context("writing table")?;
    append_traces(&dir.join("traces.jsonl"), &run.traces)?;
    let files: Vec<String> = ["metrics.json", "comparison.txt", "taxonomy.txt", "traces.jsonl"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_manifest(&dir, "benchmark", &files, &settings)?;

    println!("{comparison}");
    println!("{taxonomy}");
    println!("gate violations: {}", run.metrics.gate_violations());
    println!("outputs in {}", dir.display());
    if run.metrics.gate_violations() > 0 {
        return Err(CliError::Failed("precondition gate violated".into()));
    }
    if run.metrics.full_meets(SUCCESS_BOUND) {
        Ok(())
    } else {
        Err(CliError::Failed(format!("full configuration below {SUCCESS_BOUND} on some task")))
    }
}

fn load_map(path: &Path) -> Result<SemanticVoxelMap, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("map file {} not found; run `map build` first", path.display())));
    }
    SemanticVoxelMap::load(path).map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_map(command: MapCommand) -> Result<(), CliError> {
    match command {
        MapCommand::Build { scene, seed, map } => {
            let spec = load_scene(&scene)?.with_seed(seed);
            let world = build_world(&spec).map_err(|e| CliError::Config(e.to_string()))?;
            let m = occupancy_map(&world);
            if let Some(parent) = map.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            m.save(&map).map_err(|e| CliError::Internal(e.into()))?;
            println!("{} cells for {} written to {}", m.cells.len(), spec.name, map.display());
            Ok(())
        }
        MapCommand::Locate { query, map } => {
            let m = load_map(&map)?;
            let Some(hit) = locate(&m, &query) else {
                return Err(CliError::Failed(format!("no match for {query:?}")));
            };
            let p = hit.position;
            println!("cell {:.2} {:.2} {:.2} similarity {:.3}", p.x, p.y, p.z, hit.similarity);
            if let Some(id) = &hit.object_id {
                if let Some(c) = m.object_centroid(id) {
                    println!("object {id} centroid {:.2} {:.2} {:.2}", c.x, c.y, c.z);
                }
            }
            Ok(())
        }
        MapCommand::Path { from, to, query, map } => {
            let m = load_map(&map)?;
            let goal = match (to, query) {
                (Some((x, y)), _) => Vec3::new(x, y, 0.0),
                (None, Some(q)) => locate(&m, &q)
                    .ok_or_else(|| CliError::Failed(format!("no match for {q:?}")))?
                    .position,
                (None, None) => return Err(CliError::Config("give --to or --query".into())),
            };
            let plan = plan_path(&m, Vec3::new(from.0, from.1, 0.0), goal)
                .ok_or_else(|| CliError::Failed("no path".into()))?;
            for c in &plan.cells {
                let p = m.column_center(*c);
                println!("{:.2} {:.2}", p.x, p.y);
            }
            println!("cost {:.3} m ({} cells)", plan.cost, plan.cells.len());
            Ok(())
        }
    }
}

fn cmd_replay(path: &Path, show_problems: bool) -> Result<(), CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let traces = read_jsonl(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut bad = 0usize;
    let mut gated = 0usize;
    for (n, t) in traces.iter().enumerate() {
        println!(
            "episode {} scene {} seed {} goal {}",
            n + 1,
            t.scene,
            t.config.seed,
            t.goal.as_deref().unwrap_or("-")
        );
        for s in &t.steps {
            if show_problems {
                println!("{}", s.problem_text);
            }
            for c in &s.candidates {
                println!(
                    "      {:>8.3} {} {}",
                    c.logprob_sum,
                    if c.feasible { "ok " } else { "no " },
                    c.raw_text
                );
            }
            println!(
                "  {:>3} -> {} ({:?}) reward {}",
                s.step, s.chosen, s.selection, s.outcome.reward
            );
        }
        println!("  {} after {} steps", if t.success { "success" } else { "failure" }, t.step_count);
        match verify_trace(t) {
            Ok(r) => gated += r.gated,
            Err(vs) => {
                for v in vs {
                    println!("  violation at step {}: {}", v.step, v.message);
                    bad += 1;
                }
            }
        }
    }
    println!("{} episodes, {gated} gated actions re-checked, {bad} violations", traces.len());
    if bad == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{bad} invariant violations")))
    }
}

fn cmd_validate(file: &Path, domain_path: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    let name = file.display();
    let is_domain = text.split_whitespace().collect::<String>().contains("(domain") && !text.contains("(problem");
    if is_domain {
        let d = parse_domain(&text).map_err(|e| CliError::Failed(format!("{name}:{e}")))?;
        println!(
            "domain {}: {} actions, {} predicates, {} types",
            d.name,
            d.actions.len(),
            d.predicates.len(),
            d.types.len()
        );
        return Ok(());
    }
    let domain = match domain_path {
        Some(p) => {
            let dt = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse_domain(&dt).map_err(|e| CliError::Failed(format!("{}:{e}", p.display())))?
        }
        None => canonical_domain(),
    };
    let p = parse_problem(&text, &domain).map_err(|e| CliError::Failed(format!("{name}:{e}")))?;
    println!(
        "problem {} for {}: {} objects, {} init atoms",
        p.name,
        p.domain_name,
        p.objects.len(),
        p.init.len()
    );
    Ok(())
}
