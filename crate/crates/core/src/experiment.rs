//! Batch experiments: configuration files, replications and CSV output.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{RunRecord, RunStatus};
use crate::error::Error;
use crate::game::{validate_game, ValidationReport};
use crate::oracle::{BatchSchedule, OracleMode};
use crate::scenarios::{build_game, GameSpec, Scenario};
use crate::solvers::{run, validate_config, PrimalSign, RunOptions, SolverConfig, SolverKind};
use crate::splitting::StepSizes;
use crate::tuning::{
    check_srfb_steps, estimate_extended_lipschitz, geometric_grid, srfb_step_bound, tune_scaled_steps, StepConfig, StepMode,
    TunedStep, DEFAULT_PROBE_BUDGET,
};

/// Failure modes of an experiment, each with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Parse(_) | ExperimentError::Io(_) => 1,
            ExperimentError::Validation(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Validation(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub scenario_params: serde_json::Value,
    pub solvers: Vec<SolverSpec>,
    #[serde(default)]
    pub budget: Budget,
    pub seeds: Vec<u64>,
    #[serde(default = "default_outdir")]
    pub outdir: PathBuf,
    /// Record wall-clock milliseconds in the CSVs (breaks byte-identical reruns).
    #[serde(default)]
    pub timing: bool,
}

fn default_outdir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub max_iters: usize,
    #[serde(default)]
    pub tol_res: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iters: 1000, tol_res: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub steps: StepsSpec,
    #[serde(default = "default_oracle")]
    pub oracle: OracleMode,
    /// Step rule of the vanishing-step method.
    #[serde(default)]
    pub vanishing: Option<VanishingSpec>,
    #[serde(default)]
    pub sign: PrimalSign,
    #[serde(default)]
    pub tuning: TuningSpec,
}

fn default_delta() -> f64 {
    0.7
}

fn default_oracle() -> OracleMode {
    OracleMode::Saa(BatchSchedule::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanishingSpec {
    pub gamma0: f64,
    pub eta: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    #[default]
    Auto,
}

/// `"auto"`, one step for every block, or per-block steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Auto(Auto),
    Uniform(f64),
    Blocks { alpha: PerAgent, nu: PerAgent, sigma: PerAgent },
}

impl Default for StepsSpec {
    fn default() -> Self {
        StepsSpec::Auto(Auto::Auto)
    }
}

/// A value shared by all agents or one value per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Shared(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            PerAgent::Shared(v) => vec![*v; n],
            PerAgent::Each(v) => v.clone(),
        }
    }
}

fn blocks(alpha: &PerAgent, nu: &PerAgent, sigma: &PerAgent, n: usize) -> StepSizes {
    StepSizes { alpha: alpha.expand(n), nu: nu.expand(n), sigma: sigma.expand(n) }
}

/// Grid and probe length of the instability tuner. `shape` fixes the ratios between the
/// primal, auxiliary and dual steps; the tuner scales all of them together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSpec {
    pub grid_start: f64,
    pub grid_ratio: f64,
    pub grid_count: usize,
    pub probe_budget: usize,
    pub shape: Option<ShapeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub alpha: PerAgent,
    pub nu: PerAgent,
    pub sigma: PerAgent,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self { grid_start: 1e-4, grid_ratio: 2.0, grid_count: 20, probe_budget: DEFAULT_PROBE_BUDGET, shape: None }
    }
}

impl TuningSpec {
    pub fn grid(&self) -> Vec<f64> {
        geometric_grid(self.grid_start, self.grid_ratio, self.grid_count)
    }

    fn shape(&self, n: usize) -> StepSizes {
        match &self.shape {
            Some(s) => blocks(&s.alpha, &s.nu, &s.sigma, n),
            None => StepSizes::uniform(n, 1.0),
        }
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let ok = self.grid_start.is_finite() && self.grid_start > 0.0 && self.grid_ratio > 1.0 && self.grid_count > 0;
        if !ok || self.probe_budget == 0 {
            return Err(invalid("tuning needs grid_start > 0, grid_ratio > 1, grid_count ≥ 1 and probe_budget ≥ 1"));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn game_spec(&self) -> GameSpec {
        GameSpec { scenario: self.scenario.clone(), scenario_params: self.scenario_params.clone() }
    }

    fn check(&self) -> Result<(), ExperimentError> {
        if self.solvers.is_empty() {
            return Err(invalid("at least one solver is required"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(invalid("replication seeds must be distinct"));
        }
        if let Some(t) = self.budget.tol_res {
            if !(t.is_finite() && t >= 0.0) {
                return Err(invalid(format!("tol_res = {t} must be a nonnegative number")));
            }
        }
        let mut names = BTreeSet::new();
        for s in &self.solvers {
            if !names.insert(s.kind.name()) {
                return Err(invalid(format!("solver {} is listed twice", s.kind)));
            }
        }
        Ok(())
    }
}

impl SolverSpec {
    fn mode(&self) -> StepMode {
        match self.vanishing {
            Some(v) => StepMode::Vanishing { gamma0: v.gamma0, eta: v.eta, offset: v.offset },
            None => StepMode::Fixed,
        }
    }

    /// Configuration with the given steps; `"auto"` becomes the tuning shape at the first
    /// grid value, which is what static validation sees.
    fn config(&self, n: usize, steps: Option<StepSizes>, budget: &Budget, seed: u64) -> SolverConfig {
        let steps = steps.unwrap_or_else(|| match &self.steps {
            StepsSpec::Auto(_) => self.tuning.shape(n).scaled(self.tuning.grid_start),
            StepsSpec::Uniform(s) => StepSizes::uniform(n, *s),
            StepsSpec::Blocks { alpha, nu, sigma } => blocks(alpha, nu, sigma, n),
        });
        SolverConfig {
            kind: self.kind,
            step: StepConfig { delta: self.delta, steps, mode: self.mode() },
            oracle: self.oracle,
            max_iters: budget.max_iters,
            tol: budget.tol_res,
            seed,
            sign: self.sign,
        }
    }

    /// The vanishing-step method never reads the fixed steps, so it is never tuned.
    fn needs_tuning(&self) -> bool {
        matches!(self.steps, StepsSpec::Auto(_)) && self.kind != SolverKind::SrfbNep
    }
}

/// A solver configuration after tuning, with the warnings raised against it.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub config: SolverConfig,
    pub tuned: Option<TunedStep>,
    pub warnings: Vec<String>,
}

/// Static checks: the scenario builds and every solver accepts its configuration.
fn prepare(cfg: &ExperimentConfig) -> Result<(Scenario, Vec<Vec<String>>), ExperimentError> {
    cfg.check()?;
    let scenario = build_game(&cfg.game_spec()).map_err(invalid)?;
    let n = scenario.game.n_players();
    let mut warnings = Vec::new();
    for spec in &cfg.solvers {
        if spec.needs_tuning() {
            spec.tuning.check()?;
        }
        let sc = spec.config(n, None, &cfg.budget, cfg.seeds[0]);
        let w = validate_config(&scenario.game, &sc).map_err(|e| invalid(format!("{}: {e}", spec.kind)))?;
        warnings.push(w);
    }
    Ok((scenario, warnings))
}

/// Tunes (if requested) and validates the configuration of `spec` for one seed.
pub fn resolve(scenario: &Scenario, spec: &SolverSpec, budget: &Budget, seed: u64) -> crate::Result<Resolved> {
    let game = &scenario.game;
    let n = game.n_players();
    let mut config = spec.config(n, None, budget, seed);
    let mut tuned = None;
    if spec.needs_tuning() {
        let t = tune_scaled_steps(game, &config, &spec.tuning.shape(n), &spec.tuning.grid(), spec.tuning.probe_budget)?;
        config.step.steps = spec.tuning.shape(n).scaled(t.step);
        tuned = Some(t);
    }
    let mut warnings = validate_config(game, &config)?;
    if tuned.is_some_and(|t| t.no_instability) {
        warnings.push("tuner observed no instability on its grid; using the largest grid step".into());
    }
    if matches!(config.kind, SolverKind::Srfb | SolverKind::SrfbProjection) && game.has_exact_pseudogradient() {
        let ell = estimate_extended_lipschitz(game, seed)?;
        let bound = srfb_step_bound(ell, config.step.delta)?;
        if let Err(v) = check_srfb_steps(&config.step.steps, bound) {
            warnings.push(format!("steps exceed the SRFB bound: {v}"));
        }
    }
    Ok(Resolved { config, tuned, warnings })
}

/// One replication's entry in `manifest.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ManifestRun {
    pub solver: SolverKind,
    pub seed: u64,
    pub file: String,
    pub config: SolverConfig,
    pub tuned: Option<TunedStep>,
    pub warnings: Vec<String>,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_params: serde_json::Value,
    pub budget: Budget,
    pub seeds: Vec<u64>,
    pub runs: Vec<ManifestRun>,
}

/// Finished experiment, already written to disk.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub outdir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
}

impl ExperimentOutcome {
    pub fn all_diverged(&self) -> bool {
        self.records.iter().all(RunRecord::diverged)
    }

    /// `0`, or `3` when every replication diverged.
    pub fn exit_code(&self) -> i32 {
        if self.all_diverged() {
            3
        } else {
            0
        }
    }
}

/// Command-line overrides of the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub outdir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(d) = &self.outdir {
            cfg.outdir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
    }
}

pub fn csv_name(scenario: &str, kind: SolverKind, seed: u64) -> String {
    format!("{scenario}_{}_{seed}.csv", kind.name())
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(invalid)?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every (solver, seed) replication of `cfg` and writes one CSV per replication plus
/// `manifest.json`. Nothing is written unless all replications ran.
pub fn run_experiment(mut cfg: ExperimentConfig, overrides: &Overrides) -> Result<ExperimentOutcome, ExperimentError> {
    overrides.apply(&mut cfg);
    let (scenario, _) = prepare(&cfg)?;
    let jobs: Vec<(&SolverSpec, u64)> =
        cfg.solvers.iter().flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let opts = RunOptions {
        reference: scenario.reference.clone(),
        timing: cfg.timing,
        monitor_identities: true,
        ..Default::default()
    };
    let results = with_pool(overrides.threads, || {
        jobs.par_iter()
            .map(|&(spec, seed)| {
                let resolved = resolve(&scenario, spec, &cfg.budget, seed)?;
                let record = run(&scenario.game, &resolved.config, &opts)?;
                Ok::<_, Error>((resolved, record))
            })
            .collect::<Vec<_>>()
    })?;

    let mut runs = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for ((spec, seed), result) in jobs.iter().zip(results) {
        let (resolved, record) = result.map_err(|e| invalid(format!("{} seed {seed}: {e}", spec.kind)))?;
        let last = record.last();
        runs.push(ManifestRun {
            solver: spec.kind,
            seed: *seed,
            file: csv_name(&cfg.scenario, spec.kind, *seed),
            config: resolved.config,
            tuned: resolved.tuned,
            warnings: resolved.warnings,
            status: record.status,
            iterations: last.k,
            final_residual: last.residual,
        });
        records.push(record);
    }
    let manifest = Manifest {
        scenario: cfg.scenario.clone(),
        scenario_params: cfg.scenario_params.clone(),
        budget: cfg.budget.clone(),
        seeds: cfg.seeds.clone(),
        runs,
    };

    fs::create_dir_all(&cfg.outdir)?;
    for (entry, record) in manifest.runs.iter().zip(&records) {
        fs::write(cfg.outdir.join(&entry.file), record.to_csv())?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
    fs::write(cfg.outdir.join("manifest.json"), json + "\n")?;
    Ok(ExperimentOutcome { outdir: cfg.outdir, manifest, records })
}

/// Result of `validate`: the game checks plus per-solver warnings.
#[derive(Debug, Serialize)]
pub struct ConfigReport {
    pub game: ValidationReport,
    pub solvers: Vec<(SolverKind, Vec<String>)>,
}

impl ConfigReport {
    pub fn passed(&self) -> bool {
        self.game.passed()
    }
}

pub fn validate_experiment(cfg: &ExperimentConfig) -> Result<ConfigReport, ExperimentError> {
    let (scenario, warnings) = prepare(cfg)?;
    let game = validate_game(&scenario.game);
    let solvers = cfg.solvers.iter().map(|s| s.kind).zip(warnings).collect();
    Ok(ConfigReport { game, solvers })
}

/// Steps chosen by the tuner for each solver, using the first seed.
pub fn tune_experiment(cfg: &ExperimentConfig) -> Result<Vec<Resolved>, ExperimentError> {
    let (scenario, _) = prepare(cfg)?;
    cfg.solvers
        .iter()
        .map(|s| resolve(&scenario, s, &cfg.budget, cfg.seeds[0]).map_err(|e| invalid(format!("{}: {e}", s.kind))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb", "steps": 0.1}], "seeds": [1]}"#;

    #[test]
    fn parses_steps_forms() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.solvers[0].steps, StepsSpec::Uniform(0.1));
        assert_eq!(c.budget, Budget::default());
        let c = parse_config(
            r#"{"scenario": "quadratic-kkt", "seeds": [1, 2], "solvers": [
                {"kind": "seg", "steps": "auto", "oracle": {"mode": "saa", "c": 2, "k0": 1, "a": 0.5}},
                {"kind": "srpfb", "steps": {"alpha": [0.1, 0.2], "nu": 0.1, "sigma": 0.1}, "oracle": {"mode": "sa"}}]}"#,
        )
        .unwrap();
        assert_eq!(c.solvers[0].steps, StepsSpec::Auto(Auto::Auto));
        assert_eq!(c.solvers[0].oracle, OracleMode::Saa(BatchSchedule { c: 2.0, k0: 1.0, a: 0.5, cap: None }));
        let s = c.solvers[1].config(2, None, &c.budget, 1).step.steps;
        assert_eq!(s.alpha, vec![0.1, 0.2]);
        assert_eq!(c.solvers[1].oracle, OracleMode::Sa);
    }

    #[test]
    fn parse_and_validation_errors_have_their_codes() {
        assert_eq!(parse_config("{").unwrap_err().exit_code(), 1);
        assert_eq!(parse_config(r#"{"scenario": "x", "solvers": [], "seeds": [1], "extra": 1}"#).unwrap_err().exit_code(), 1);
        assert_eq!(parse_config(r#"{"scenario": "x", "solvers": [{"kind": "srfb", "steps": "fast"}], "seeds": [1]}"#).unwrap_err().exit_code(), 1);
        let bad = [
            r#"{"scenario": "illustrative", "solvers": [], "seeds": [1]}"#,
            r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb"}], "seeds": [1, 1]}"#,
            r#"{"scenario": "nowhere", "solvers": [{"kind": "srfb"}], "seeds": [1]}"#,
            r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb", "steps": 0.1, "oracle": {"mode": "saa", "c": 0}}], "seeds": [1]}"#,
            r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb", "steps": -0.1}], "seeds": [1]}"#,
            r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb", "delta": 0.2, "steps": 0.1}], "seeds": [1]}"#,
            r#"{"scenario": "illustrative", "solvers": [{"kind": "srfb-nep", "delta": 0.5}], "seeds": [1]}"#,
        ];
        for text in bad {
            let cfg = parse_config(text).unwrap();
            let err = validate_experiment(&cfg).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn resolve_tunes_auto_steps_along_the_shape() {
        let cfg = parse_config(
            r#"{"scenario": "illustrative", "seeds": [3], "solvers": [{"kind": "srfb",
                "tuning": {"grid_start": 0.01, "grid_count": 12, "probe_budget": 200,
                           "shape": {"alpha": 1, "nu": 2, "sigma": 4}}}]}"#,
        )
        .unwrap();
        let resolved = tune_experiment(&cfg).unwrap().remove(0);
        let t = resolved.tuned.unwrap();
        let s = &resolved.config.step.steps;
        assert_eq!((s.alpha[0], s.nu[0], s.sigma[0]), (t.step, 2.0 * t.step, 4.0 * t.step));
    }
}
