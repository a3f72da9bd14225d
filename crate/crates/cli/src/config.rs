//! Settings resolution: flags override the config file, which overrides
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;
use taskloop::oracle::{Backend, EndpointConfig, HttpBackend, ScriptedBackend};
use taskloop::planner::{PlannerConfig, Variant};
use taskloop::worldsim::{FailureRates, SceneSpec, CANONICAL_SCENES};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablate {
    Feasibility,
    Optimal,
    All,
}

/// Flags shared by `run` and `benchmark`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Scene name, or path to a scene JSON file. Repeatable for benchmark.
    #[arg(long, value_delimiter = ',')]
    pub scene: Vec<String>,
    /// Instruction; defaults to the scene's own.
    #[arg(long)]
    pub instruction: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Base URL of a chat-completions endpoint (remote backend).
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidates requested per step.
    #[arg(long)]
    pub k: Option<usize>,
    /// Step budget per episode.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Answer flip rate of the scripted backend.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Failure probability of navigation and manipulation primitives.
    #[arg(long = "p-fail")]
    pub p_fail: Option<f64>,
    #[arg(long, value_enum)]
    pub ablate: Option<Ablate>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Leave wall-clock data out of outputs so reruns are byte-identical.
    #[arg(long = "no-timestamps")]
    pub no_timestamps: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scene: Option<Vec<String>>,
    pub instruction: Option<String>,
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub k: Option<usize>,
    pub horizon: Option<usize>,
    pub epsilon: Option<f64>,
    pub p_fail: Option<f64>,
    pub temperature: Option<f64>,
    pub ablate: Option<Ablate>,
    pub out: Option<PathBuf>,
    pub endpoint: Option<EndpointConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub scenes: Vec<SceneSpec>,
    pub instruction: Option<String>,
    pub backend: BackendKind,
    pub endpoint: EndpointConfig,
    pub planner: PlannerConfig,
    pub seeds: usize,
    pub ablate: Option<Ablate>,
    pub out: PathBuf,
    pub timestamps: bool,
}

pub fn load_scene(name: &str) -> Result<SceneSpec, CliError> {
    let path = Path::new(name);
    if name.ends_with(".json") && path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        return SceneSpec::from_json(&text).map_err(|e| CliError::Config(format!("{name}: {e}")));
    }
    SceneSpec::canonical(name).map_err(|_| {
        CliError::Config(format!("unknown scene `{name}` (known: {})", CANONICAL_SCENES.join(", ")))
    })
}

impl Settings {
    /// `default_scenes` applies when neither flags nor file name a scene.
    pub fn resolve(args: &CommonArgs, seeds: Option<usize>, default_scenes: &[&str]) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let names: Vec<String> = if !args.scene.is_empty() {
            args.scene.clone()
        } else if let Some(s) = file.scene.clone() {
            s
        } else {
            default_scenes.iter().map(|s| s.to_string()).collect()
        };
        if names.is_empty() {
            return Err(CliError::Config("no scene given; use --scene".into()));
        }
        let scenes = names.iter().map(|n| load_scene(n)).collect::<Result<Vec<_>, _>>()?;

        let defaults = PlannerConfig::default();
        let p_fail = args.p_fail.or(file.p_fail).map(FailureRates::uniform).unwrap_or(defaults.p_fail);
        let ablate = args.ablate.or(file.ablate);
        let timestamps = !args.no_timestamps;
        let planner = PlannerConfig {
            k_candidates: args.k.or(file.k).unwrap_or(defaults.k_candidates),
            horizon: args.horizon.or(file.horizon).unwrap_or(defaults.horizon),
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            temperature: file.temperature.unwrap_or(defaults.temperature),
            p_fail,
            record_timings: timestamps,
            ablate_feasibility: matches!(ablate, Some(Ablate::Feasibility | Ablate::All)),
            ablate_optimal_selection: matches!(ablate, Some(Ablate::Optimal | Ablate::All)),
        };
        planner.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let mut endpoint = file.endpoint.unwrap_or_default();
        if let Some(url) = &args.endpoint {
            endpoint.base_url = url.clone();
        }
        if let Some(m) = &args.model {
            endpoint.model = m.clone();
        }
        let backend = args.backend.or(file.backend).unwrap_or(BackendKind::Scripted);
        if backend == BackendKind::Remote && endpoint.base_url.is_empty() {
            return Err(CliError::Config("remote backend needs --endpoint or [endpoint] base_url".into()));
        }
        let seeds = seeds.or(file.seeds).unwrap_or(100);
        if seeds == 0 {
            return Err(CliError::Config("--seeds must be at least 1".into()));
        }
        Ok(Self {
            scenes,
            instruction: args.instruction.clone().or(file.instruction),
            backend,
            endpoint: endpoint.with_env_token(),
            planner,
            seeds,
            ablate,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
            timestamps,
        })
    }

    pub fn backend_for(&self, config: &PlannerConfig) -> Result<Box<dyn Backend>, CliError> {
        Ok(match self.backend {
            BackendKind::Scripted => Box::new(ScriptedBackend::new(config.epsilon)),
            BackendKind::Remote => {
                Box::new(HttpBackend::new(self.endpoint.clone()).map_err(|e| CliError::Config(e.to_string()))?)
            }
        })
    }

    /// Configurations a benchmark compares: always the full one, plus the
    /// requested ablations.
    pub fn variants(&self) -> Vec<Variant> {
        match self.ablate {
            None => vec![Variant::Full],
            Some(Ablate::Feasibility) => vec![Variant::Full, Variant::WithoutFeasibility],
            Some(Ablate::Optimal) => vec![Variant::Full, Variant::WithoutOptimalSelection],
            Some(Ablate::All) => Variant::ALL.to_vec(),
        }
    }

    /// Planner config with both ablation flags cleared, for benchmarks.
    pub fn base_planner(&self) -> PlannerConfig {
        PlannerConfig {
            ablate_feasibility: false,
            ablate_optimal_selection: false,
            ..self.planner.clone()
        }
    }
}
