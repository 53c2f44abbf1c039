//! Experiment orchestration: structured configs, deterministic cell
//! enumeration, bounded-parallel execution with append-only JSONL records,
//! CSV aggregation, and a compiled-constants audit.
//!
//! A run is a grid of (condition, seed) cells. Given a synthetic or scripted
//! oracle the whole run is a pure function of the config and its seeds:
//! records carry no timestamps, cells are executed under semantic seeds (not
//! enumeration order), and results are buffered so the record file is written
//! in canonical order regardless of worker scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ambiguity::{
    sample_consistent_profile, AmbiguityOptions, DEFAULT_EPS_CONS, DEFAULT_PROPOSALS,
};
use crate::bo::{
    make_battery_desk_pool, run_bo, shared_env, Acquisition, BoConfig, BoObjective, BoTrace,
    ContinuousObjective, GpDesignOracle, GpSurfaceOracle, SurfaceEchoOracle, BO_BETA, BO_LAMBDA,
    BO_NLL_FLOOR,
};
use crate::elicit::{
    elicit, EchoOracle, ElicitOptions, GpBeliefOracle, HttpOracle, HttpOracleConfig, Oracle,
    PromptSpec, Protocol, RecordingOracle, ScriptedOracle, Structure, Style,
};
use crate::families::{
    evaluate, evaluate_many, make_candidate_pool, sample_instance, FamilyKind, FunctionInstance,
    ObservationSet, QueryGrid, DEFAULT_DOMAIN, DEFAULT_GRID_POINTS,
};
use crate::gp::{GP_AMPLITUDE, GP_LENGTH_SCALE, GP_NUGGET};
use crate::metrics::{
    alignment, alignment_rho, csr_rate, frs, frs_tau, nrmse, select_family_aicc, FRS_TAU_AGGREGATE,
};
use crate::sequential::{
    build_order, classify_trajectory, conflict_delta_min, gp_replay, run_sequential, Condition,
    TrajectoryClass, CONFLICT_LAMBDA, INFO_LOCAL_BANDWIDTH, INFO_WEIGHT_GLOBAL, INFO_WEIGHT_LOCAL,
};
use crate::{seeds, Error, Result};

/// Version stamped into every record; bump on breaking schema changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Which study a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Single-shot belief elicitation scored against the truth curve.
    Elicit,
    /// Uncertainty proxies ranked against the reference ambiguity profile.
    Align,
    /// Sequential evidence schedules with GP replay controls.
    Sequential,
    /// Batched optimization driven by surrogate beliefs.
    Bo,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Elicit => "elicit",
            Study::Align => "align",
            Study::Sequential => "sequential",
            Study::Bo => "bo",
        }
    }
}

/// Oracle backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Echoes the hidden truth (optionally jittered); the strongest control.
    SyntheticEcho,
    /// GP posterior sampler over the prompt's own observations.
    SyntheticGp,
    /// Replays completions recorded in a JSONL transcript.
    Scripted,
    /// Remote chat-completions endpoint.
    Http,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::SyntheticEcho => "synthetic_echo",
            OracleKind::SyntheticGp => "synthetic_gp",
            OracleKind::Scripted => "scripted",
            OracleKind::Http => "http",
        }
    }
}

/// Oracle construction and call-shaping options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Endpoint URL (http oracle only).
    pub url: Option<String>,
    /// Model identifier (http oracle only).
    pub model: Option<String>,
    /// Environment variable holding the API key (http oracle only).
    pub api_key_env: String,
    /// Transcript path (scripted oracle only).
    pub script_path: Option<PathBuf>,
    /// Bound on concurrently executing cells.
    pub max_concurrency: usize,
    pub temperature: f64,
    /// Gaussian jitter applied by the echo oracle; keeps rank-based
    /// alignment metrics away from constant-vector degeneracy.
    pub jitter: f64,
    pub timeout_secs: u64,
    /// Persist every request/reply pair under `completions/` and reference
    /// the file from the cell's record.
    pub record_completions: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::SyntheticGp,
            url: None,
            model: None,
            api_key_env: "ORACLE_API_KEY".into(),
            script_path: None,
            max_concurrency: 8,
            temperature: 1.0,
            jitter: 0.05,
            timeout_secs: 60,
            record_completions: false,
        }
    }
}

/// Query-grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: DEFAULT_GRID_POINTS,
            lo: DEFAULT_DOMAIN.0,
            hi: DEFAULT_DOMAIN.1,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<QueryGrid> {
        QueryGrid::uniform(self.lo, self.hi, self.points)
    }
}

/// Which truths the curve studies elicit beliefs about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub families: Vec<FamilyKind>,
    /// Independent truth draws per (family, seed).
    pub instances_per_family: usize,
    /// Evidence sizes; 0 elicits against the prior.
    pub obs_counts: Vec<usize>,
    pub grid: GridConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            families: FamilyKind::ALL.to_vec(),
            instances_per_family: 1,
            obs_counts: vec![3, 6],
            grid: GridConfig::default(),
        }
    }
}

/// Prompt-condition matrix crossed into curve-study cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionMatrix {
    pub protocols: Vec<Protocol>,
    pub styles: Vec<Style>,
    pub structures: Vec<Structure>,
}

impl Default for ConditionMatrix {
    fn default() -> Self {
        ConditionMatrix {
            protocols: vec![Protocol::Pointwise],
            styles: vec![Style::Neutral],
            structures: vec![Structure::Unknown],
        }
    }
}

/// Sequential-study knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequentialConfig {
    pub conditions: Vec<Condition>,
    /// Observations revealed over the schedule.
    pub pool_size: usize,
    /// Contradiction scale for the conflict conditions.
    pub lambda: f64,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            conditions: Condition::ALL.to_vec(),
            pool_size: 12,
            lambda: CONFLICT_LAMBDA,
        }
    }
}

/// Objective selector for the optimization study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoObjectiveName {
    CanonicalBranin,
    ShiftedBranin,
    BatteryPool,
}

impl BoObjectiveName {
    pub fn name(self) -> &'static str {
        match self {
            BoObjectiveName::CanonicalBranin => "canonical_branin",
            BoObjectiveName::ShiftedBranin => "shifted_branin",
            BoObjectiveName::BatteryPool => "battery_pool",
        }
    }
}

/// Optimization-study knobs; count overrides fall back to the objective's
/// stock configuration when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoStudyConfig {
    pub objectives: Vec<BoObjectiveName>,
    pub acquisitions: Vec<Acquisition>,
    pub n_init: Option<usize>,
    pub n_steps: Option<usize>,
    pub pool_size: Option<usize>,
    pub batch: Option<usize>,
    /// Prompt protocol for belief-backed scoring rules.
    pub protocol: Protocol,
    pub style: Style,
}

impl Default for BoStudyConfig {
    fn default() -> Self {
        BoStudyConfig {
            objectives: vec![BoObjectiveName::CanonicalBranin],
            acquisitions: Acquisition::ALL.to_vec(),
            n_init: None,
            n_steps: None,
            pool_size: None,
            batch: None,
            protocol: Protocol::Pointwise,
            style: Style::Neutral,
        }
    }
}

/// Rejection-filter knobs for the reference-ambiguity profile used by the
/// alignment study. The defaults are the audited library constants; the
/// proposal stream still escalates past `proposals` when the filtered set
/// is too small (see the ambiguity module).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmbiguityConfig {
    /// Consistency band around each observation.
    pub eps_cons: f64,
    /// Base proposal budget per profile.
    pub proposals: usize,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        AmbiguityConfig {
            eps_cons: DEFAULT_EPS_CONS,
            proposals: DEFAULT_PROPOSALS,
        }
    }
}

impl AmbiguityConfig {
    fn options(&self) -> AmbiguityOptions {
        AmbiguityOptions {
            eps_cons: self.eps_cons,
            proposals: self.proposals,
            slack: 0.0,
        }
    }
}

/// Complete description of one experiment; every run output is a pure
/// function of this value (plus the remote endpoint, when one is used).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    pub oracle: OracleConfig,
    pub task: TaskConfig,
    pub conditions: ConditionMatrix,
    /// Repeated completions per elicitation.
    pub repeats: usize,
    /// Replicate seeds; one cell per (condition, seed).
    pub seeds: Vec<u64>,
    pub ambiguity: AmbiguityConfig,
    pub sequential: SequentialConfig,
    pub bo: BoStudyConfig,
    /// Default output directory; a CLI flag may override it.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            study: Study::Elicit,
            oracle: OracleConfig::default(),
            task: TaskConfig::default(),
            conditions: ConditionMatrix::default(),
            repeats: 12,
            seeds: vec![0, 1, 2],
            ambiguity: AmbiguityConfig::default(),
            sequential: SequentialConfig::default(),
            bo: BoStudyConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Stock desk-scale config for a study.
    pub fn default_for(study: Study) -> Self {
        let mut config = ExperimentConfig {
            study,
            ..ExperimentConfig::default()
        };
        match study {
            Study::Elicit => {}
            Study::Align => {
                // Families whose sampling prior leaves practical acceptance
                // mass inside the default consistency band; the narrow-basin
                // families (quadratic, sinusoidal) need a custom band or
                // budget and are opt-in for this study.
                config.task.families = vec![
                    FamilyKind::Gaussian,
                    FamilyKind::Logistic,
                    FamilyKind::Linear,
                    FamilyKind::Exponential,
                ];
            }
            Study::Sequential => {
                config.task.families = vec![FamilyKind::Gaussian];
            }
            Study::Bo => {
                config.seeds = (0..5).collect();
            }
        }
        config
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Field-level validation; collects every problem before failing.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.repeats == 0 {
            problems.push("repeats: must be >= 1".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("seeds: must list at least one seed".to_string());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            problems.push("seeds: must be distinct".to_string());
        }
        if self.task.grid.points < 6 {
            problems.push("task.grid.points: need >= 6 for curve-shape selection".to_string());
        }
        if !(self.task.grid.lo < self.task.grid.hi) {
            problems.push("task.grid: lo must be below hi".to_string());
        }
        if !self.oracle.temperature.is_finite() || self.oracle.temperature < 0.0 {
            problems.push("oracle.temperature: must be finite and nonnegative".to_string());
        }
        if !self.oracle.jitter.is_finite() || self.oracle.jitter < 0.0 {
            problems.push("oracle.jitter: must be finite and nonnegative".to_string());
        }
        if self.oracle.max_concurrency == 0 {
            problems.push("oracle.max_concurrency: must be >= 1".to_string());
        }
        if !(self.ambiguity.eps_cons > 0.0) || !self.ambiguity.eps_cons.is_finite() {
            problems.push("ambiguity.eps_cons: must be finite and positive".to_string());
        }
        if self.ambiguity.proposals < 2 {
            problems.push("ambiguity.proposals: must be >= 2".to_string());
        }
        match self.oracle.kind {
            OracleKind::Scripted => {
                if self.oracle.script_path.is_none() {
                    problems.push("oracle.script_path: required for the scripted oracle".into());
                }
            }
            OracleKind::Http => {
                if self.oracle.url.is_none() {
                    problems.push("oracle.url: required for the http oracle".into());
                }
                if self.oracle.model.is_none() {
                    problems.push("oracle.model: required for the http oracle".into());
                }
            }
            OracleKind::SyntheticEcho | OracleKind::SyntheticGp => {}
        }
        match self.study {
            Study::Elicit | Study::Align => {
                if self.task.families.is_empty() {
                    problems.push("task.families: must list at least one family".into());
                }
                if self.task.instances_per_family == 0 {
                    problems.push("task.instances_per_family: must be >= 1".into());
                }
                if self.task.obs_counts.is_empty() {
                    problems.push("task.obs_counts: must list at least one count".into());
                }
                if self.conditions.protocols.is_empty()
                    || self.conditions.styles.is_empty()
                    || self.conditions.structures.is_empty()
                {
                    problems.push("conditions: every axis needs at least one entry".into());
                }
            }
            Study::Sequential => {
                if self.task.families.is_empty() {
                    problems.push("task.families: must list at least one family".into());
                }
                if self.sequential.conditions.is_empty() {
                    problems.push("sequential.conditions: must list at least one".into());
                }
                if self.sequential.pool_size < 4 {
                    problems.push("sequential.pool_size: need >= 4 revealed points".into());
                }
                if !(self.sequential.lambda > 0.0) || !self.sequential.lambda.is_finite() {
                    problems.push("sequential.lambda: must be positive and finite".into());
                }
            }
            Study::Bo => {
                if self.bo.objectives.is_empty() {
                    problems.push("bo.objectives: must list at least one objective".into());
                }
                if self.bo.acquisitions.is_empty() {
                    problems.push("bo.acquisitions: must list at least one rule".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// SHA-256 of the resolved config's canonical JSON form, hex-encoded.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&canonical);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    /// Hash of the resolved config that produced this record.
    pub config_hash: String,
    pub study: Study,
    /// Condition key, e.g. `gaussian/obs3/pointwise+neutral+unknown`.
    pub condition: String,
    pub seed: u64,
    /// Wall-clock seconds since the epoch; populated only for remote
    /// oracles so synthetic runs stay byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    /// Relative path of the raw-completions transcript, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completions: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Present when the cell failed; metrics are then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Study-specific payload of one executable cell.
#[derive(Debug, Clone, PartialEq)]
enum CellWork {
    Curve {
        kind: FamilyKind,
        instance: usize,
        n_obs: usize,
        protocol: Protocol,
        style: Style,
        structure: Structure,
    },
    Sequential {
        kind: FamilyKind,
        instance: usize,
        condition: Condition,
    },
    Bo {
        objective: BoObjectiveName,
        acquisition: Acquisition,
    },
}

/// One (condition, seed) execution unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub condition: String,
    pub seed: u64,
    work: CellWork,
}

fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Pointwise => "pointwise",
        Protocol::Joint => "joint",
    }
}

fn style_name(s: Style) -> &'static str {
    match s {
        Style::Neutral => "neutral",
        Style::Underdetermined => "underdetermined",
        Style::UnrelatedWarning => "unrelated_warning",
    }
}

fn structure_name(s: Structure) -> &'static str {
    match s {
        Structure::Unknown => "unknown",
        Structure::TellNonlinear => "tell_nonlinear",
        Structure::TellType => "tell_type",
        Structure::TellTypeStructure => "tell_type_structure",
        Structure::TellTypeParams => "tell_type_params",
        Structure::WrongType => "wrong_type",
    }
}

/// The full cell list in canonical order (seeds innermost).
pub fn enumerate_cells(config: &ExperimentConfig) -> Result<Vec<Cell>> {
    config.validate()?;
    let mut cells = Vec::new();
    match config.study {
        Study::Elicit | Study::Align => {
            for &kind in &config.task.families {
                for instance in 0..config.task.instances_per_family {
                    let inst_part = if config.task.instances_per_family > 1 {
                        format!("inst{instance}/")
                    } else {
                        String::new()
                    };
                    for &n_obs in &config.task.obs_counts {
                        for &protocol in &config.conditions.protocols {
                            for &style in &config.conditions.styles {
                                for &structure in &config.conditions.structures {
                                    let condition = format!(
                                        "{}/{}obs{}/{}+{}+{}",
                                        kind.name(),
                                        inst_part,
                                        n_obs,
                                        protocol_name(protocol),
                                        style_name(style),
                                        structure_name(structure)
                                    );
                                    for &seed in &config.seeds {
                                        cells.push(Cell {
                                            condition: condition.clone(),
                                            seed,
                                            work: CellWork::Curve {
                                                kind,
                                                instance,
                                                n_obs,
                                                protocol,
                                                style,
                                                structure,
                                            },
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Study::Sequential => {
            for &kind in &config.task.families {
                for instance in 0..config.task.instances_per_family {
                    let inst_part = if config.task.instances_per_family > 1 {
                        format!("inst{instance}/")
                    } else {
                        String::new()
                    };
                    for &condition in &config.sequential.conditions {
                        let key = format!("{}/{}{}", kind.name(), inst_part, condition.name());
                        for &seed in &config.seeds {
                            cells.push(Cell {
                                condition: key.clone(),
                                seed,
                                work: CellWork::Sequential {
                                    kind,
                                    instance,
                                    condition,
                                },
                            });
                        }
                    }
                }
            }
        }
        Study::Bo => {
            for &objective in &config.bo.objectives {
                for &acquisition in &config.bo.acquisitions {
                    let key = format!("{}/{}", objective.name(), acquisition.name());
                    for &seed in &config.seeds {
                        cells.push(Cell {
                            condition: key.clone(),
                            seed,
                            work: CellWork::Bo {
                                objective,
                                acquisition,
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Outcome counts of one `run_experiment` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub cells_total: usize,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub cells_failed: usize,
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    hash: &'a str,
    /// Process-wide oracle for backends that are cell-independent.
    shared: Option<Arc<dyn Oracle>>,
    completions_dir: Option<PathBuf>,
}

/// Either a borrowed shared oracle or a wrapper that also transcribes calls.
enum CellOracle {
    Plain(Arc<dyn Oracle>),
    Recording(RecordingOracle<Arc<dyn Oracle>>),
}

impl CellOracle {
    fn as_dyn(&self) -> &dyn Oracle {
        match self {
            CellOracle::Plain(oracle) => &**oracle,
            CellOracle::Recording(oracle) => oracle,
        }
    }
}

fn sanitize_for_filename(condition: &str) -> String {
    condition
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Builds the non-synthetic, cell-independent oracle once per run.
fn build_shared_oracle(config: &OracleConfig) -> Result<Option<Arc<dyn Oracle>>> {
    match config.kind {
        OracleKind::SyntheticEcho | OracleKind::SyntheticGp => Ok(None),
        OracleKind::Scripted => {
            let path = config
                .script_path
                .as_ref()
                .ok_or_else(|| Error::Config("oracle.script_path: required".into()))?;
            Ok(Some(Arc::new(ScriptedOracle::from_jsonl(path)?)))
        }
        OracleKind::Http => {
            let url = config
                .url
                .clone()
                .ok_or_else(|| Error::Config("oracle.url: required".into()))?;
            let model = config
                .model
                .clone()
                .ok_or_else(|| Error::Config("oracle.model: required".into()))?;
            let http = HttpOracle::new(HttpOracleConfig {
                url,
                model,
                api_key_env: config.api_key_env.clone(),
                timeout_secs: config.timeout_secs,
                logprobs: true,
                max_tokens: 512,
            })?;
            Ok(Some(Arc::new(http)))
        }
    }
}

fn shared_or_err(ctx: &RunContext) -> Result<Arc<dyn Oracle>> {
    ctx.shared
        .clone()
        .ok_or_else(|| Error::Config("oracle backend was not constructed".into()))
}

/// Oracle for a 1D curve or sequential cell.
fn curve_cell_oracle(ctx: &RunContext, truth: &FunctionInstance) -> Result<Arc<dyn Oracle>> {
    match ctx.config.oracle.kind {
        OracleKind::SyntheticEcho => {
            let mut echo = EchoOracle::exact(truth.clone());
            if ctx.config.oracle.jitter > 0.0 {
                echo = echo.with_jitter(ctx.config.oracle.jitter);
            }
            Ok(Arc::new(echo))
        }
        OracleKind::SyntheticGp => Ok(Arc::new(GpBeliefOracle::default())),
        OracleKind::Scripted | OracleKind::Http => shared_or_err(ctx),
    }
}

/// Oracle for a belief-backed optimization cell.
fn bo_cell_oracle(ctx: &RunContext, objective: &BoObjective) -> Result<Arc<dyn Oracle>> {
    match ctx.config.oracle.kind {
        OracleKind::SyntheticEcho => match objective {
            BoObjective::Continuous(surface) => {
                let mut echo = SurfaceEchoOracle::exact(*surface);
                if ctx.config.oracle.jitter > 0.0 {
                    echo = echo.with_jitter(ctx.config.oracle.jitter);
                }
                Ok(Arc::new(echo))
            }
            BoObjective::Pool(pool) => Ok(Arc::new(GpDesignOracle::new(pool.bounds.clone()))),
        },
        OracleKind::SyntheticGp => match objective {
            BoObjective::Continuous(surface) => Ok(Arc::new(GpSurfaceOracle::new(surface.domain()))),
            BoObjective::Pool(pool) => Ok(Arc::new(GpDesignOracle::new(pool.bounds.clone()))),
        },
        OracleKind::Scripted | OracleKind::Http => shared_or_err(ctx),
    }
}

/// Wraps the cell's oracle in a transcript writer when recording is on.
fn with_recording(
    ctx: &RunContext,
    cell: &Cell,
    oracle: Arc<dyn Oracle>,
) -> Result<(CellOracle, Option<String>)> {
    match &ctx.completions_dir {
        None => Ok((CellOracle::Plain(oracle), None)),
        Some(dir) => {
            let file = format!(
                "{}-s{}.jsonl",
                sanitize_for_filename(&cell.condition),
                cell.seed
            );
            let path = dir.join(&file);
            let recording = RecordingOracle::create(oracle, &path)?;
            Ok((
                CellOracle::Recording(recording),
                Some(format!("completions/{file}")),
            ))
        }
    }
}

fn truth_seed(seed: u64, kind: FamilyKind, instance: usize) -> u64 {
    seeds::mix(seed, &[0x7472, kind as u64, instance as u64])
}

fn observations_for(truth: &FunctionInstance, n_obs: usize) -> Result<ObservationSet> {
    match n_obs {
        0 => ObservationSet::new(Vec::new()),
        1 => {
            let x = (truth.domain.0 + truth.domain.1) / 2.0;
            ObservationSet::new(vec![(x, evaluate(truth, x)?)])
        }
        _ => make_candidate_pool(truth, n_obs),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Metrics for one elicit or align cell.
#[allow(clippy::too_many_arguments)]
fn run_curve_cell(
    ctx: &RunContext,
    cell: &Cell,
    kind: FamilyKind,
    instance: usize,
    n_obs: usize,
    protocol: Protocol,
    style: Style,
    structure: Structure,
) -> Result<(BTreeMap<String, f64>, Option<String>)> {
    let config = ctx.config;
    let truth = sample_instance(kind, truth_seed(cell.seed, kind, instance));
    let obs = observations_for(&truth, n_obs)?;
    let grid = config.task.grid.build()?;
    let spec = PromptSpec::new(protocol, style, structure);
    let cell_seed = seeds::mix(
        cell.seed,
        &[
            0xce11,
            kind as u64,
            instance as u64,
            n_obs as u64,
            protocol as u64,
            style as u64,
            structure as u64,
        ],
    );
    let opts = ElicitOptions {
        repeats: config.repeats,
        temperature: config.oracle.temperature,
        seed: cell_seed,
        max_concurrency: 1,
    };
    let (oracle, completions) = with_recording(ctx, cell, curve_cell_oracle(ctx, &truth)?)?;
    let belief = elicit(oracle.as_dyn(), &spec, &obs, &grid, Some(&truth), &opts)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("invalid_rate".to_string(), belief.invalid_rate);
    match config.study {
        Study::Elicit => {
            let mean_curve = belief.mean_curve()?;
            let truth_vals = evaluate_many(&truth, grid.locations())?;
            metrics.insert("nrmse".to_string(), nrmse(&mean_curve, &truth_vals)?);
            let selection = select_family_aicc(grid.locations(), &mean_curve)?;
            metrics.insert(
                "winner_match".to_string(),
                if selection.winner == kind { 1.0 } else { 0.0 },
            );
            let tau = match frs_tau(&truth_vals) {
                Ok(t) if t.is_finite() && t > 0.0 => t,
                _ => FRS_TAU_AGGREGATE,
            };
            let points: Vec<(f64, f64)> = grid
                .locations()
                .iter()
                .copied()
                .zip(mean_curve.iter().copied())
                .collect();
            metrics.insert("frs_score".to_string(), frs(kind, &points, tau)?.score);
            if n_obs >= 2
                && matches!(
                    kind,
                    FamilyKind::Linear | FamilyKind::Gaussian | FamilyKind::Logistic
                )
            {
                let anchors = [obs.points()[0], obs.points()[obs.len() - 1]];
                let preds: Vec<(f64, f64)> = points
                    .iter()
                    .copied()
                    .filter(|&(x, _)| {
                        anchors
                            .iter()
                            .all(|&(ax, _)| (x - ax).abs() > crate::families::REPEATED_LOCATION_TOL)
                    })
                    .collect();
                metrics.insert(
                    "csr_rate".to_string(),
                    csr_rate(kind, anchors, &preds)?.rate,
                );
            }
            metrics.insert(
                "mean_sampling_variance".to_string(),
                mean(&belief.sampling_variance()?),
            );
            if let Ok(conf) = belief.token_confidence() {
                metrics.insert("mean_confidence".to_string(), mean(&conf));
            }
        }
        Study::Align => {
            let variance = belief.sampling_variance()?;
            let mean_nll = belief.mean_nll().ok();
            let profile_seed = seeds::mix(
                cell.seed,
                &[0x616d, kind as u64, instance as u64, n_obs as u64],
            );
            let profile = sample_consistent_profile(
                kind,
                &obs,
                &grid,
                &ctx.config.ambiguity.options(),
                profile_seed,
            )?;
            let report = alignment(&variance, None, &profile, &obs)?;
            metrics.insert("rho_variance".to_string(), report.rho_variance);
            if let Some(nll) = mean_nll {
                // An oracle with constant token widths (the echo control)
                // carries no NLL rank signal; that proxy is then absent
                // rather than the cell failing.
                match alignment_rho(&nll, &profile, &obs) {
                    Ok(rho) => {
                        metrics.insert("rho_nll".to_string(), rho);
                    }
                    Err(Error::DegenerateRanks) => {}
                    Err(e) => return Err(e),
                }
            }
            metrics.insert("locations_used".to_string(), report.locations_used as f64);
            metrics.insert("profile_accepted".to_string(), profile.accepted as f64);
        }
        Study::Sequential | Study::Bo => {
            return Err(Error::Config("curve cell under a non-curve study".into()));
        }
    }
    Ok((metrics, completions))
}

/// Metrics for one sequential-schedule cell.
fn run_sequential_cell(
    ctx: &RunContext,
    cell: &Cell,
    kind: FamilyKind,
    instance: usize,
    condition: Condition,
) -> Result<(BTreeMap<String, f64>, Option<String>)> {
    let config = ctx.config;
    let truth = sample_instance(kind, truth_seed(cell.seed, kind, instance));
    let pool = make_candidate_pool(&truth, config.sequential.pool_size)?;
    let grid = config.task.grid.build()?;
    let order_seed = seeds::mix(
        cell.seed,
        &[0x6f72, kind as u64, instance as u64, condition as u64],
    );
    let order = build_order(
        &truth,
        &pool,
        condition,
        &grid,
        config.sequential.lambda,
        order_seed,
    )?;
    let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::Unknown);
    let cell_seed = seeds::mix(
        cell.seed,
        &[0x5e90, kind as u64, instance as u64, condition as u64],
    );
    let (oracle, completions) = with_recording(ctx, cell, curve_cell_oracle(ctx, &truth)?)?;
    let trace = run_sequential(oracle.as_dyn(), &truth, &order, &grid, &spec, cell_seed)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("steps_completed".to_string(), trace.steps.len() as f64);
    metrics.insert(
        "aborted".to_string(),
        if trace.aborted_at_step.is_some() { 1.0 } else { 0.0 },
    );
    if let Some(t) = trace.aborted_at_step {
        metrics.insert("aborted_at_step".to_string(), t as f64);
    }
    if let Some(last) = trace.steps.last() {
        metrics.insert("final_accuracy".to_string(), last.accuracy);
    }
    let confidences: Vec<f64> = trace
        .steps
        .iter()
        .filter_map(|s| s.mean_confidence)
        .collect();
    if confidences.len() == trace.steps.len() && !confidences.is_empty() {
        metrics.insert("first_confidence".to_string(), confidences[0]);
        metrics.insert(
            "last_confidence".to_string(),
            confidences[confidences.len() - 1],
        );
        if let Some(t) = trace.t_valley {
            metrics.insert("t_valley".to_string(), t as f64);
        }
        if let Some(depth) = trace.valley_depth {
            metrics.insert("valley_depth".to_string(), depth);
        }
        if confidences.len() >= 3 {
            let class = classify_trajectory(&confidences)?;
            metrics.insert(
                "trajectory_monotone_up".to_string(),
                if class == TrajectoryClass::MonotoneUp { 1.0 } else { 0.0 },
            );
            metrics.insert(
                "trajectory_u_shape".to_string(),
                if class == TrajectoryClass::UShape { 1.0 } else { 0.0 },
            );
            metrics.insert(
                "trajectory_inverted_u_then_up".to_string(),
                if class == TrajectoryClass::InvertedUThenUp { 1.0 } else { 0.0 },
            );
        }
    }
    if let Some(ci) = order.conflict_index {
        if let Some(step) = trace.steps.get(ci - 1) {
            metrics.insert("conflict_surprise".to_string(), step.conflict_surprise);
        }
    }
    let replay = gp_replay(&truth, &order, &grid)?;
    if let Some(last) = replay.steps.last() {
        metrics.insert("gp_final_accuracy".to_string(), last.accuracy);
        if let Some(conf) = last.mean_confidence {
            metrics.insert("gp_final_confidence".to_string(), conf);
        }
    }
    if let Some(t) = replay.t_valley {
        metrics.insert("gp_t_valley".to_string(), t as f64);
    }
    Ok((metrics, completions))
}

fn bo_objective_for(name: BoObjectiveName, seed: u64) -> Result<BoObjective> {
    Ok(match name {
        BoObjectiveName::CanonicalBranin => {
            BoObjective::Continuous(ContinuousObjective::CanonicalBranin)
        }
        BoObjectiveName::ShiftedBranin => {
            BoObjective::Continuous(ContinuousObjective::ShiftedBranin)
        }
        BoObjectiveName::BatteryPool => BoObjective::Pool(make_battery_desk_pool(seed)?),
    })
}

/// Metrics for one optimization cell.
fn run_bo_cell(
    ctx: &RunContext,
    cell: &Cell,
    objective_name: BoObjectiveName,
    acquisition: Acquisition,
) -> Result<(BTreeMap<String, f64>, Option<String>)> {
    let config = ctx.config;
    // The environment seed ignores the scoring rule so rules with the same
    // replicate seed optimize over identical initializations and pools.
    let bo_seed = seeds::mix(cell.seed, &[0xb0b0, objective_name as u64]);
    let objective = bo_objective_for(objective_name, cell.seed)?;
    let mut bo_config = match objective_name {
        BoObjectiveName::BatteryPool => BoConfig::fixed_pool(acquisition, bo_seed),
        _ => BoConfig::branin(acquisition, bo_seed),
    };
    if let Some(n) = config.bo.n_init {
        bo_config.n_init = n;
    }
    if let Some(n) = config.bo.n_steps {
        bo_config.n_steps = n;
    }
    if let Some(n) = config.bo.pool_size {
        bo_config.pool_size = n;
    }
    if let Some(n) = config.bo.batch {
        bo_config.batch = n;
    }
    bo_config.protocol = config.bo.protocol;
    bo_config.style = config.bo.style;
    let env = shared_env(
        &objective,
        bo_config.n_init,
        bo_config.n_steps,
        bo_config.pool_size,
        bo_seed,
    )?;
    let (oracle, completions) = if acquisition.needs_oracle() {
        let (oracle, completions) = with_recording(ctx, cell, bo_cell_oracle(ctx, &objective)?)?;
        (Some(oracle), completions)
    } else {
        (None, None)
    };
    let trace = run_bo(
        &objective,
        &env,
        oracle.as_ref().map(|o| o.as_dyn()),
        &bo_config,
    )?;
    Ok((bo_trace_metrics(&trace), completions))
}

fn bo_trace_metrics(trace: &BoTrace) -> BTreeMap<String, f64> {
    let mut metrics = BTreeMap::new();
    metrics.insert("final_regret".to_string(), trace.final_regret);
    let init_best = trace
        .init
        .iter()
        .map(|p| p.value)
        .fold(f64::NEG_INFINITY, f64::max);
    metrics.insert("init_best".to_string(), init_best);
    metrics.insert(
        "stopped_early".to_string(),
        if trace.stopped_early_at.is_some() { 1.0 } else { 0.0 },
    );
    if let Some(t) = trace.stopped_early_at {
        metrics.insert("stopped_early_at".to_string(), t as f64);
    }
    let mut failed = 0usize;
    let mut degenerate = 0usize;
    let mut proxy_missing = 0usize;
    let mut rank_corrs = Vec::new();
    let mut decile_hits = Vec::new();
    for step in &trace.steps {
        metrics.insert(format!("regret_t{:02}", step.step), step.regret);
        if step.failed {
            failed += 1;
        }
        if step.ei_degenerate {
            degenerate += 1;
        }
        if step.proxy_missing {
            proxy_missing += 1;
        }
        if let Some(rho) = step.rank_corr {
            rank_corrs.push(rho);
        }
        if let Some(hit) = step.top_decile_hit {
            decile_hits.push(if hit { 1.0 } else { 0.0 });
        }
    }
    metrics.insert("failed_steps".to_string(), failed as f64);
    metrics.insert("ei_degenerate_steps".to_string(), degenerate as f64);
    metrics.insert("proxy_missing_steps".to_string(), proxy_missing as f64);
    if !rank_corrs.is_empty() {
        metrics.insert("mean_rank_corr".to_string(), mean(&rank_corrs));
    }
    if !decile_hits.is_empty() {
        metrics.insert("top_decile_rate".to_string(), mean(&decile_hits));
    }
    metrics
}

fn execute_cell(ctx: &RunContext, cell: &Cell) -> RunRecord {
    let outcome = match &cell.work {
        CellWork::Curve {
            kind,
            instance,
            n_obs,
            protocol,
            style,
            structure,
        } => run_curve_cell(
            ctx, cell, *kind, *instance, *n_obs, *protocol, *style, *structure,
        ),
        CellWork::Sequential {
            kind,
            instance,
            condition,
        } => run_sequential_cell(ctx, cell, *kind, *instance, *condition),
        CellWork::Bo {
            objective,
            acquisition,
        } => run_bo_cell(ctx, cell, *objective, *acquisition),
    };
    let timestamp = if ctx.config.oracle.kind == OracleKind::Http {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    } else {
        None
    };
    let (metrics, completions, error) = match outcome {
        Ok((metrics, completions)) => (metrics, completions, None),
        Err(e) => (BTreeMap::new(), None, Some(e.to_string())),
    };
    RunRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: ctx.hash.to_string(),
        study: ctx.config.study,
        condition: cell.condition.clone(),
        seed: cell.seed,
        timestamp,
        completions,
        metrics,
        error,
    }
}

fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    if !path.exists() {
        return Ok(records);
    }
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Executes every pending cell of `config` into `out_dir`.
///
/// Writes `config.json` (the resolved config) and appends one record per
/// cell to `records.jsonl`, then refreshes the aggregate CSVs. With
/// `resume`, cells whose (condition, seed) already appear in the record file
/// are skipped; without it, a directory that already holds records is
/// refused. Worker parallelism is bounded by `oracle.max_concurrency`;
/// records are buffered and appended in canonical cell order by a single
/// writer so equal configs yield byte-identical files.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<RunSummary> {
    let cells = enumerate_cells(config)?;
    let hash = config_hash(config)?;
    std::fs::create_dir_all(out_dir)?;
    let config_path = out_dir.join("config.json");
    if config_path.exists() {
        let existing: ExperimentConfig =
            serde_json::from_str(&std::fs::read_to_string(&config_path)?)?;
        if config_hash(&existing)? != hash {
            return Err(Error::Config(format!(
                "{} holds a different experiment (config hash mismatch); use a fresh directory",
                out_dir.display()
            )));
        }
    } else {
        let mut pretty = serde_json::to_string_pretty(config)?;
        pretty.push('\n');
        std::fs::write(&config_path, pretty)?;
    }

    let records_path = out_dir.join("records.jsonl");
    let existing = read_records(&records_path)?;
    if !existing.is_empty() && !resume {
        return Err(Error::Config(format!(
            "{} already holds {} records; pass resume to continue it",
            out_dir.display(),
            existing.len()
        )));
    }
    let done: BTreeSet<(String, u64)> = existing
        .iter()
        .map(|r| (r.condition.clone(), r.seed))
        .collect();
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| !done.contains(&(c.condition.clone(), c.seed)))
        .collect();

    let completions_dir = if config.oracle.record_completions {
        let dir = out_dir.join("completions");
        std::fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };
    let ctx = RunContext {
        config,
        hash: &hash,
        shared: build_shared_oracle(&config.oracle)?,
        completions_dir,
    };

    let results: Vec<Mutex<Option<RunRecord>>> =
        pending.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.oracle.max_concurrency.min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= pending.len() {
                    break;
                }
                let record = execute_cell(&ctx, pending[i]);
                *results[i].lock().expect("result slot poisoned") = Some(record);
            });
        }
    });

    let mut failed = 0usize;
    {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)?;
        let mut writer = std::io::BufWriter::new(file);
        for slot in &results {
            let record = slot
                .lock()
                .expect("result slot poisoned")
                .take()
                .ok_or_else(|| Error::NumericalFailure("worker dropped a cell".into()))?;
            if record.error.is_some() {
                failed += 1;
            }
            writeln!(writer, "{}", serde_json::to_string(&record)?)?;
        }
        writer.flush()?;
    }
    aggregate(out_dir)?;
    Ok(RunSummary {
        cells_total: cells.len(),
        cells_run: pending.len(),
        cells_skipped: cells.len() - pending.len(),
        cells_failed: failed,
    })
}

/// Outcome of an aggregation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateSummary {
    pub records: usize,
    pub failed: usize,
    pub conditions: usize,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (m, (ss / (values.len() - 1) as f64).sqrt())
}

/// Rebuilds `summary.csv` (and, when the records carry them,
/// `valley_hist.csv` and `regret_curves.csv`) from `records.jsonl`.
///
/// Error records are excluded from every statistic. Regret curves are padded
/// to their condition's longest recorded length with each run's final value
/// before averaging.
pub fn aggregate(dir: &Path) -> Result<AggregateSummary> {
    let records_path = dir.join("records.jsonl");
    let records = read_records(&records_path)?;
    if records.is_empty() {
        return Err(Error::NoData(format!(
            "no records under {}",
            dir.display()
        )));
    }
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let failed = records.len() - ok.len();

    let mut by_metric: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for record in &ok {
        for (key, value) in &record.metrics {
            by_metric
                .entry((record.condition.clone(), key.clone()))
                .or_default()
                .push(*value);
        }
    }
    let mut summary = String::from("condition,metric,mean,sd,count\n");
    for ((condition, metric), values) in &by_metric {
        let (m, sd) = mean_sd(values);
        summary.push_str(&format!("{condition},{metric},{m},{sd},{}\n", values.len()));
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    let mut valley: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for record in &ok {
        if let Some(&t) = record.metrics.get("t_valley") {
            *valley.entry((record.condition.clone(), t as u64)).or_default() += 1;
        }
    }
    if !valley.is_empty() {
        let mut hist = String::from("condition,t_valley,count\n");
        for ((condition, t), count) in &valley {
            hist.push_str(&format!("{condition},{t},{count}\n"));
        }
        std::fs::write(dir.join("valley_hist.csv"), hist)?;
    }

    let mut curves: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for record in &ok {
        let mut steps: BTreeMap<usize, f64> = BTreeMap::new();
        for (key, value) in &record.metrics {
            if let Some(suffix) = key.strip_prefix("regret_t") {
                if let Ok(step) = suffix.parse::<usize>() {
                    steps.insert(step, *value);
                }
            }
        }
        if !steps.is_empty() {
            curves
                .entry(record.condition.clone())
                .or_default()
                .push(steps.into_values().collect());
        }
    }
    if !curves.is_empty() {
        let mut csv = String::from("condition,step,mean_regret,sd,count\n");
        for (condition, runs) in &curves {
            let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
            for step in 0..longest {
                let at_step: Vec<f64> = runs
                    .iter()
                    .map(|r| if step < r.len() { r[step] } else { r[r.len() - 1] })
                    .collect();
                let (m, sd) = mean_sd(&at_step);
                csv.push_str(&format!(
                    "{condition},{},{m},{sd},{}\n",
                    step + 1,
                    at_step.len()
                ));
            }
        }
        std::fs::write(dir.join("regret_curves.csv"), csv)?;
    }

    let conditions: BTreeSet<&str> = records.iter().map(|r| r.condition.as_str()).collect();
    Ok(AggregateSummary {
        records: records.len(),
        failed,
        conditions: conditions.len(),
    })
}

/// Snapshot of the compiled default constants, taken apart so tests can
/// tamper with individual entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantValues {
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub frs_tau_aggregate: f64,
    pub gp_amplitude: f64,
    pub gp_length_scale: f64,
    pub gp_nugget: f64,
    pub info_weight_global: f64,
    pub info_weight_local: f64,
    pub info_local_bandwidth: f64,
    pub conflict_lambda: f64,
    pub bo_lambda: f64,
    pub conflict_delta_min: f64,
    pub bo_beta: f64,
    pub bo_nll_floor: f64,
    pub eps_cons: f64,
}

impl ConstantValues {
    pub fn current() -> Self {
        ConstantValues {
            grid_points: DEFAULT_GRID_POINTS,
            grid_lo: DEFAULT_DOMAIN.0,
            grid_hi: DEFAULT_DOMAIN.1,
            frs_tau_aggregate: FRS_TAU_AGGREGATE,
            gp_amplitude: GP_AMPLITUDE,
            gp_length_scale: GP_LENGTH_SCALE,
            gp_nugget: GP_NUGGET,
            info_weight_global: INFO_WEIGHT_GLOBAL,
            info_weight_local: INFO_WEIGHT_LOCAL,
            info_local_bandwidth: INFO_LOCAL_BANDWIDTH,
            conflict_lambda: CONFLICT_LAMBDA,
            bo_lambda: BO_LAMBDA,
            conflict_delta_min: conflict_delta_min(CONFLICT_LAMBDA),
            bo_beta: BO_BETA,
            bo_nll_floor: BO_NLL_FLOOR,
            eps_cons: DEFAULT_EPS_CONS,
        }
    }
}

/// One audited table row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantCheck {
    pub name: &'static str,
    pub detail: String,
    pub ok: bool,
}

/// Audit report over the eight checked constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub checks: Vec<ConstantCheck>,
}

/// Audits `values` against the reference table; any mismatch fails with the
/// offending check names.
pub fn check_constants(values: &ConstantValues) -> Result<ConstantsReport> {
    let checks = vec![
        ConstantCheck {
            name: "grid",
            detail: format!(
                "{} points on [{}, {}] (want 41 on [-5, 5])",
                values.grid_points, values.grid_lo, values.grid_hi
            ),
            ok: values.grid_points == 41 && values.grid_lo == -5.0 && values.grid_hi == 5.0,
        },
        ConstantCheck {
            name: "frs_tau",
            detail: format!("aggregate scale {} (want 0.64)", values.frs_tau_aggregate),
            ok: values.frs_tau_aggregate == 0.64,
        },
        ConstantCheck {
            name: "gp_kernel",
            detail: format!(
                "amplitude {} length {} nugget {} (want 1, 1, 1e-6)",
                values.gp_amplitude, values.gp_length_scale, values.gp_nugget
            ),
            ok: values.gp_amplitude == 1.0
                && values.gp_length_scale == 1.0
                && values.gp_nugget == 1e-6,
        },
        ConstantCheck {
            name: "info_weights",
            detail: format!(
                "global {} local {} bandwidth {} (want 0.35, 0.65, 1.5)",
                values.info_weight_global, values.info_weight_local, values.info_local_bandwidth
            ),
            ok: values.info_weight_global == 0.35
                && values.info_weight_local == 0.65
                && values.info_local_bandwidth == 1.5,
        },
        ConstantCheck {
            name: "lambda",
            detail: format!(
                "conflict scale {} belief-width weight {} (want 3, 3)",
                values.conflict_lambda, values.bo_lambda
            ),
            ok: values.conflict_lambda == 3.0 && values.bo_lambda == 3.0,
        },
        ConstantCheck {
            name: "delta_min",
            detail: format!(
                "contradiction floor {} (want max(0.8, 0.35 * lambda) = 1.05)",
                values.conflict_delta_min
            ),
            ok: values.conflict_delta_min == 1.05
                && values.conflict_delta_min
                    == (values.conflict_lambda * 35.0 / 100.0).max(0.8),
        },
        ConstantCheck {
            name: "beta",
            detail: format!("upper-confidence weight {} (want 3)", values.bo_beta),
            ok: values.bo_beta == 3.0,
        },
        ConstantCheck {
            name: "nll_floor",
            detail: format!("token-width floor {} (want 1e-6)", values.bo_nll_floor),
            ok: values.bo_nll_floor == 1e-6,
        },
    ];
    let offenders: Vec<String> = checks
        .iter()
        .filter(|c| !c.ok)
        .map(|c| c.name.to_string())
        .collect();
    if offenders.is_empty() {
        Ok(ConstantsReport { checks })
    } else {
        Err(Error::ConstantsDrift(offenders))
    }
}

/// Audits the compiled defaults.
pub fn validate_constants() -> Result<ConstantsReport> {
    check_constants(&ConstantValues::current())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_align_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default_for(Study::Align);
        config.oracle.kind = OracleKind::SyntheticEcho;
        config.task.families = vec![FamilyKind::Gaussian];
        config.task.obs_counts = vec![4];
        config.task.grid.points = 21;
        config.conditions.styles = vec![Style::Neutral, Style::Underdetermined];
        config.repeats = 6;
        config.seeds = vec![0];
        config
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let text = toml::to_string(&config).expect("serialize");
        let back = ExperimentConfig::from_toml_str(&text).expect("parse");
        assert_eq!(back, config);
    }

    #[test]
    fn minimal_toml_fills_defaults_and_unknown_fields_are_refused() {
        let config = ExperimentConfig::from_toml_str("study = \"align\"").expect("parse");
        assert_eq!(config.study, Study::Align);
        assert_eq!(config.repeats, 12);
        assert_eq!(config.task.grid.points, 41);
        let err = ExperimentConfig::from_toml_str("studyy = \"align\"").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn validation_collects_field_level_messages() {
        let mut config = ExperimentConfig::default();
        config.repeats = 0;
        config.seeds = vec![3, 3];
        config.task.grid.points = 4;
        let err = config.validate().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("repeats"), "missing repeats in {text}");
        assert!(text.contains("seeds"), "missing seeds in {text}");
        assert!(text.contains("grid.points"), "missing grid in {text}");
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let config = ExperimentConfig::default();
        let h1 = config_hash(&config).unwrap();
        let h2 = config_hash(&config).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = config.clone();
        other.seeds = vec![0, 1, 3];
        assert_ne!(config_hash(&other).unwrap(), h1);
    }

    #[test]
    fn cell_enumeration_is_deterministic_and_counts_the_cross_product() {
        let config = tiny_align_config();
        let cells = enumerate_cells(&config).unwrap();
        // 1 family x 1 obs count x (1 protocol x 2 styles x 1 structure) x 1 seed.
        assert_eq!(cells.len(), 2);
        assert_eq!(cells, enumerate_cells(&config).unwrap());
        assert_eq!(cells[0].condition, "gaussian/obs4/pointwise+neutral+unknown");
        assert_eq!(
            cells[1].condition,
            "gaussian/obs4/pointwise+underdetermined+unknown"
        );

        let bo = ExperimentConfig::default_for(Study::Bo);
        let bo_cells = enumerate_cells(&bo).unwrap();
        assert_eq!(bo_cells.len(), 1 * Acquisition::ALL.len() * 5);
        assert_eq!(bo_cells[0].condition, "canonical_branin/gp_ucb");
    }

    #[test]
    fn align_smoke_run_writes_records_and_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_align_config();
        let summary = run_experiment(&config, dir.path(), false).unwrap();
        assert_eq!(summary.cells_total, 2);
        assert_eq!(summary.cells_run, 2);

        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        assert_eq!(records.len(), 2);
        for record in &records {
            assert!(record.error.is_none(), "cell failed: {record:?}");
        }
        for record in &records {
            assert_eq!(record.schema_version, SCHEMA_VERSION);
            assert_eq!(record.config_hash, config_hash(&config).unwrap());
            assert!(record.timestamp.is_none());
            assert!(record.metrics.contains_key("rho_variance"), "{record:?}");
        }
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(csv.starts_with("condition,metric,mean,sd,count\n"));
        assert!(csv.contains("rho_variance"));
        assert!(dir.path().join("config.json").exists());
    }

    #[test]
    fn rerun_skips_completed_cells_and_resumes_partial_runs() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_align_config();
        run_experiment(&config, dir.path(), false).unwrap();
        let records_path = dir.path().join("records.jsonl");
        let full = std::fs::read_to_string(&records_path).unwrap();

        // A completed run resumed again touches nothing.
        let summary = run_experiment(&config, dir.path(), true).unwrap();
        assert_eq!(summary.cells_run, 0);
        assert_eq!(summary.cells_skipped, 2);
        assert_eq!(std::fs::read_to_string(&records_path).unwrap(), full);

        // Truncating to one record simulates an interrupted run; the resumed
        // run executes only the missing cell and leaves no duplicates.
        let first_line = full.lines().next().unwrap();
        std::fs::write(&records_path, format!("{first_line}\n")).unwrap();
        let summary = run_experiment(&config, dir.path(), true).unwrap();
        assert_eq!(summary.cells_run, 1);
        let records = read_records(&records_path).unwrap();
        assert_eq!(records.len(), 2);
        let keys: BTreeSet<(String, u64)> = records
            .iter()
            .map(|r| (r.condition.clone(), r.seed))
            .collect();
        assert_eq!(keys.len(), 2);

        // Without resume, a populated directory is refused.
        let err = run_experiment(&config, dir.path(), false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn identical_runs_produce_byte_identical_outputs() {
        let config = tiny_align_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&config, a.path(), false).unwrap();
        run_experiment(&config, b.path(), false).unwrap();
        for file in ["records.jsonl", "summary.csv", "config.json"] {
            let left = std::fs::read(a.path().join(file)).unwrap();
            let right = std::fs::read(b.path().join(file)).unwrap();
            assert_eq!(left, right, "{file} differs between identical runs");
        }
    }

    #[test]
    fn mismatched_config_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_align_config();
        run_experiment(&config, dir.path(), false).unwrap();
        let mut other = config.clone();
        other.seeds = vec![7];
        let err = run_experiment(&other, dir.path(), true).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn sequential_smoke_records_schedule_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::default_for(Study::Sequential);
        config.oracle.kind = OracleKind::SyntheticEcho;
        config.task.grid.points = 21;
        config.sequential.conditions = vec![Condition::HighInfoFirst, Condition::ConflictLate];
        config.sequential.pool_size = 6;
        config.seeds = vec![0];
        let summary = run_experiment(&config, dir.path(), false).unwrap();
        assert_eq!(summary.cells_run, 2);
        assert_eq!(summary.cells_failed, 0);
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        for record in &records {
            assert!(record.metrics.contains_key("final_accuracy"), "{record:?}");
            assert!(record.metrics.contains_key("gp_final_accuracy"));
            assert!(record.metrics.contains_key("t_valley"));
        }
        let conflict = records
            .iter()
            .find(|r| r.condition.ends_with("conflict_late"))
            .unwrap();
        assert!(conflict.metrics.contains_key("conflict_surprise"));
        let hist = std::fs::read_to_string(dir.path().join("valley_hist.csv")).unwrap();
        assert!(hist.starts_with("condition,t_valley,count\n"));
    }

    #[test]
    fn bo_smoke_records_regret_curves() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::default_for(Study::Bo);
        config.oracle.kind = OracleKind::SyntheticEcho;
        config.bo.acquisitions = vec![Acquisition::GpUcb, Acquisition::Random, Acquisition::LlmUcb];
        config.bo.n_steps = Some(3);
        config.bo.pool_size = Some(12);
        config.seeds = vec![0, 1];
        let summary = run_experiment(&config, dir.path(), false).unwrap();
        assert_eq!(summary.cells_run, 6);
        assert_eq!(summary.cells_failed, 0);
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        for record in &records {
            assert!(record.metrics.contains_key("final_regret"), "{record:?}");
            assert!(record.metrics.contains_key("regret_t01"));
            assert!(record.metrics.contains_key("regret_t03"));
            assert!(*record.metrics.get("final_regret").unwrap() >= -1e-12);
        }
        let curves = std::fs::read_to_string(dir.path().join("regret_curves.csv")).unwrap();
        assert!(curves.starts_with("condition,step,mean_regret,sd,count\n"));
        assert!(curves.contains("canonical_branin/gp_ucb,3,"));
    }

    #[test]
    fn recorded_completions_are_referenced_and_replayable() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_align_config();
        config.conditions.styles = vec![Style::Neutral];
        config.oracle.record_completions = true;
        run_experiment(&config, dir.path(), false).unwrap();
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        let reference = records[0].completions.as_ref().expect("reference");
        let transcript = dir.path().join(reference);
        assert!(transcript.exists(), "missing {}", transcript.display());
        let scripted = ScriptedOracle::from_jsonl(&transcript).unwrap();
        assert!(!scripted.is_empty());
    }

    #[test]
    fn aggregate_without_records_is_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let err = aggregate(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NoData(_)));
    }

    #[test]
    fn aggregate_of_a_single_record_echoes_its_values() {
        let dir = tempfile::tempdir().unwrap();
        let record = RunRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: "0".repeat(64),
            study: Study::Elicit,
            condition: "gaussian/obs3/pointwise+neutral+unknown".into(),
            seed: 0,
            timestamp: None,
            completions: None,
            metrics: BTreeMap::from([("nrmse".to_string(), 0.25)]),
            error: None,
        };
        let line = serde_json::to_string(&record).unwrap();
        std::fs::write(dir.path().join("records.jsonl"), format!("{line}\n")).unwrap();
        let summary = aggregate(dir.path()).unwrap();
        assert_eq!(summary.records, 1);
        assert_eq!(summary.failed, 0);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(
            csv.contains("gaussian/obs3/pointwise+neutral+unknown,nrmse,0.25,0,1"),
            "{csv}"
        );
    }

    #[test]
    fn aggregate_means_pairs_of_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = String::new();
        for (seed, value) in [(0u64, 0.2f64), (1, 0.4)] {
            let record = RunRecord {
                schema_version: SCHEMA_VERSION,
                config_hash: "0".repeat(64),
                study: Study::Elicit,
                condition: "linear/obs3/pointwise+neutral+unknown".into(),
                seed,
                timestamp: None,
                completions: None,
                metrics: BTreeMap::from([("nrmse".to_string(), value)]),
                error: None,
            };
            lines.push_str(&serde_json::to_string(&record).unwrap());
            lines.push('\n');
        }
        std::fs::write(dir.path().join("records.jsonl"), lines).unwrap();
        aggregate(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(
            csv.contains("linear/obs3/pointwise+neutral+unknown,nrmse,0.30000000000000004,"),
            "{csv}"
        );
    }

    #[test]
    fn failed_cells_are_recorded_and_the_run_continues() {
        let dir = tempfile::tempdir().unwrap();
        // A scripted oracle with an empty transcript fails every completion.
        let script = dir.path().join("empty.jsonl");
        std::fs::write(&script, "").unwrap();
        let mut config = tiny_align_config();
        config.oracle.kind = OracleKind::Scripted;
        config.oracle.script_path = Some(script);
        let out = dir.path().join("run");
        let summary = run_experiment(&config, &out, false).unwrap();
        assert_eq!(summary.cells_run, 2);
        assert_eq!(summary.cells_failed, 2);
        let records = read_records(&out.join("records.jsonl")).unwrap();
        assert!(records.iter().all(|r| r.error.is_some()));
        assert!(records.iter().all(|r| r.metrics.is_empty()));
        // Aggregation over only-failed records still succeeds.
        let agg = aggregate(&out).unwrap();
        assert_eq!(agg.failed, 2);
    }

    #[test]
    fn compiled_constants_pass_and_list_eight_checks() {
        let report = validate_constants().expect("defaults drifted");
        assert_eq!(report.checks.len(), 8);
        assert!(report.checks.iter().all(|c| c.ok));
        let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
        assert_eq!(
            names,
            [
                "grid",
                "frs_tau",
                "gp_kernel",
                "info_weights",
                "lambda",
                "delta_min",
                "beta",
                "nll_floor"
            ]
        );
    }

    #[test]
    fn tampered_beta_reports_drift_by_name() {
        let mut values = ConstantValues::current();
        values.bo_beta = 2.9;
        match check_constants(&values) {
            Err(Error::ConstantsDrift(names)) => assert_eq!(names, vec!["beta".to_string()]),
            other => panic!("expected drift, got {other:?}"),
        }
    }

    #[test]
    fn elicit_smoke_records_curve_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::default_for(Study::Elicit);
        config.oracle.kind = OracleKind::SyntheticEcho;
        config.oracle.jitter = 0.0;
        config.task.families = vec![FamilyKind::Gaussian, FamilyKind::Linear];
        config.task.obs_counts = vec![3];
        config.repeats = 4;
        config.seeds = vec![0];
        let summary = run_experiment(&config, dir.path(), false).unwrap();
        assert_eq!(summary.cells_run, 2);
        assert_eq!(summary.cells_failed, 0);
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        for record in &records {
            // The exact echo reproduces the truth curve.
            assert!(*record.metrics.get("nrmse").unwrap() < 1e-9, "{record:?}");
            assert_eq!(*record.metrics.get("winner_match").unwrap(), 1.0);
            assert!(*record.metrics.get("frs_score").unwrap() > 0.99);
            assert_eq!(*record.metrics.get("invalid_rate").unwrap(), 0.0);
        }
        let linear = records
            .iter()
            .find(|r| r.condition.starts_with("linear/"))
            .unwrap();
        assert!(*linear.metrics.get("csr_rate").unwrap() > 0.99);
    }
}
