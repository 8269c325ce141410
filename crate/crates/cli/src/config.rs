//! Layered run configuration: command-line flags override the config
//! file, which overrides built-in defaults.
//!
//! The checked-in `config/default.json` at the repository root spells out
//! every default explicitly; the built-ins here match it so the binary
//! also works from a bare directory.

use std::path::{Path, PathBuf};

use eventsteer_core::scheduler::SteeringSchedule;
use eventsteer_core::simulator::SimScenario;
use eventsteer_core::strength_solver::{SolverMode, DEFAULT_MARGIN_EPS};
use eventsteer_core::subspace::Ridge;
use serde::Deserialize;

use crate::CliError;

/// Config-file schema this binary understands.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Path tried when `--config` is not given; missing is fine (built-ins
/// apply), unreadable content is not.
pub const DEFAULT_CONFIG_PATH: &str = "config/default.json";

/// `--solver` flag values, mapped onto the library's solver modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverArg {
    /// Single regularized solve of the full stationary system, clamped.
    ClosedForm,
    /// Boundary-face search with hinge active-set iteration.
    ActiveSet,
}

impl From<SolverArg> for SolverMode {
    fn from(arg: SolverArg) -> Self {
        match arg {
            SolverArg::ClosedForm => SolverMode::ClosedForm,
            SolverArg::ActiveSet => SolverMode::ActiveSet,
        }
    }
}

/// Which report files `steer-sim` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

impl ReportFormat {
    pub fn wants_json(self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::Both)
    }

    pub fn wants_csv(self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::Both)
    }
}

/// Anchor-extraction connection details from the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorFileConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_var: Option<String>,
    pub retry: Option<bool>,
    pub audit_log: Option<PathBuf>,
}

/// On-disk config document. Every field is optional; absent fields fall
/// back to built-ins. Unknown fields are rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: Option<u32>,
    /// Default plan file for `plan` and `anchors`.
    pub plan: Option<PathBuf>,
    pub scenario: Option<SimScenario>,
    pub schedule: Option<SteeringSchedule>,
    pub solver: Option<SolverMode>,
    pub margin_eps: Option<f64>,
    pub ridge: Option<Ridge>,
    pub seeds: Option<u32>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
    pub anchor: Option<AnchorFileConfig>,
}

impl FileConfig {
    /// Load the file at `path`, or probe `DEFAULT_CONFIG_PATH` when no
    /// explicit path was given. An explicit path must exist; the probed
    /// default may be absent.
    pub fn load(explicit: Option<&Path>) -> Result<FileConfig, CliError> {
        let (path, required) = match explicit {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from(DEFAULT_CONFIG_PATH), false),
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(FileConfig::default());
            }
            Err(e) => {
                return Err(CliError::Resource(format!(
                    "cannot read config {}: {e}",
                    path.display()
                )));
            }
        };
        let cfg: FileConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("invalid config {}: {e}", path.display()))
        })?;
        if let Some(v) = cfg.schema_version {
            if v != CONFIG_SCHEMA_VERSION {
                return Err(CliError::Validation(format!(
                    "config {} has schema_version {v}, this binary expects {CONFIG_SCHEMA_VERSION}",
                    path.display()
                )));
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings after flag > file > built-in layering.
#[derive(Debug, Clone)]
pub struct Settings {
    pub plan_path: Option<PathBuf>,
    pub scenario: SimScenario,
    pub schedule: SteeringSchedule,
    pub solver: SolverMode,
    pub margin_eps: f64,
    pub ridge: Ridge,
    pub out: PathBuf,
    pub format: ReportFormat,
    pub seeds: Option<u32>,
    pub anchor: AnchorSettings,
}

#[derive(Debug, Clone)]
pub struct AnchorSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_var: Option<String>,
    pub retry: bool,
    pub audit_log: Option<PathBuf>,
}

/// Flag values that participate in layering (a `None` means the flag was
/// not given and the file/built-in value applies).
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub seeds: Option<u32>,
    pub solver: Option<SolverArg>,
    pub steer_steps: Option<usize>,
    pub steer_blocks: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
}

pub fn resolve(file: &FileConfig, flags: &FlagOverrides) -> Result<Settings, CliError> {
    let mut scenario = file.scenario.clone().unwrap_or_default();
    if let Some(seed) = flags.seed {
        scenario.seed = seed;
    }

    let base = file.schedule.unwrap_or_default();
    let schedule = SteeringSchedule::new(
        flags.steer_steps.unwrap_or_else(|| base.max_steps()),
        flags.steer_blocks.unwrap_or_else(|| base.max_blocks()),
        base.total_steps(),
        base.total_blocks(),
    )
    .map_err(|e| CliError::Validation(format!("invalid steering schedule: {e}")))?;

    let seeds = flags.seeds.or(file.seeds);
    if seeds == Some(0) {
        return Err(CliError::Validation(
            "--seeds must be at least 1".to_string(),
        ));
    }

    let anchor_file = file.anchor.clone().unwrap_or_default();
    Ok(Settings {
        plan_path: file.plan.clone(),
        scenario,
        schedule,
        solver: flags
            .solver
            .map(SolverMode::from)
            .or(file.solver)
            .unwrap_or(SolverMode::ClosedForm),
        margin_eps: file.margin_eps.unwrap_or(DEFAULT_MARGIN_EPS),
        ridge: file.ridge.unwrap_or(Ridge::Auto),
        out: flags
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        format: flags.format.or(file.format).unwrap_or(ReportFormat::Both),
        seeds,
        anchor: AnchorSettings {
            endpoint: anchor_file.endpoint,
            model: anchor_file.model,
            token_var: anchor_file.token_var,
            retry: anchor_file.retry.unwrap_or(true),
            audit_log: anchor_file.audit_log,
        },
    })
}
