//! The relaxed forward-backward family and its comparison baselines, as pure step
//! functions plus a driver loop.

mod driver;
mod steps;

use serde::{Deserialize, Serialize};

pub use driver::{run, RunOptions};
pub use steps::{
    baseline_step, srfb_gnep_step, srfb_nep_step, srfb_projection_step, srpfb_step, step, StepOutput,
};

use crate::error::{Error, Result};
use crate::game::GameProblem;
use crate::oracle::{BatchSchedule, OracleMode};
use crate::splitting::StepSizes;
use crate::tuning::{check_vanishing, srpfb_step_bounds, validate_delta, DeltaRegime, StepConfig, StepMode, DEFAULT_PSI_GAMMA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverKind {
    /// Relaxed forward-backward for coupled games (prox on the local terms).
    #[serde(rename = "srfb")]
    Srfb,
    /// Same with projections onto the local sets.
    #[serde(rename = "srfb-projection")]
    SrfbProjection,
    /// Relaxed preconditioned forward-backward (affine coupling, cocoercive `F`).
    #[serde(rename = "srpfb")]
    Srpfb,
    /// Relaxed forward-backward with vanishing steps for games without coupling.
    #[serde(rename = "srfb-nep")]
    SrfbNep,
    /// Preconditioned forward-backward without relaxation.
    #[serde(rename = "spfb")]
    Spfb,
    /// Forward-backward-forward.
    #[serde(rename = "sfbf")]
    Sfbf,
    /// Extragradient.
    #[serde(rename = "seg")]
    Seg,
    /// Projected reflected gradient.
    #[serde(rename = "sprg")]
    Sprg,
}

impl SolverKind {
    pub const ALL: [SolverKind; 8] = [
        SolverKind::Srfb,
        SolverKind::SrfbProjection,
        SolverKind::Srpfb,
        SolverKind::SrfbNep,
        SolverKind::Spfb,
        SolverKind::Sfbf,
        SolverKind::Seg,
        SolverKind::Sprg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Srfb => "srfb",
            SolverKind::SrfbProjection => "srfb-projection",
            SolverKind::Srpfb => "srpfb",
            SolverKind::SrfbNep => "srfb-nep",
            SolverKind::Spfb => "spfb",
            SolverKind::Sfbf => "sfbf",
            SolverKind::Seg => "seg",
            SolverKind::Sprg => "sprg",
        }
    }

    /// `(prox passes, F̂ evaluations)` per iteration.
    pub fn signature(self) -> (u64, u64) {
        match self {
            SolverKind::Sfbf => (1, 2),
            SolverKind::Seg => (2, 2),
            _ => (1, 1),
        }
    }

    /// Whether the iteration carries a relaxed average with the configured `δ`.
    pub fn is_relaxed(self) -> bool {
        matches!(self, SolverKind::Srfb | SolverKind::SrfbProjection | SolverKind::Srpfb | SolverKind::SrfbNep)
    }

    pub fn uses_preconditioning(self) -> bool {
        matches!(self, SolverKind::Srpfb | SolverKind::Spfb)
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sign of the `A_iᵀλ_i` term in the preconditioned primal update.
///
/// `Corrected` (`+`) is the sign that makes the staged update a resolvent step of the
/// cocoercive splitting; `AsPrinted` (`−`) reproduces the published listing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimalSign {
    #[default]
    Corrected,
    AsPrinted,
}

impl PrimalSign {
    pub fn factor(self) -> f64 {
        match self {
            PrimalSign::Corrected => 1.0,
            PrimalSign::AsPrinted => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub step: StepConfig,
    pub oracle: OracleMode,
    pub max_iters: usize,
    /// Stop once both the residual and the fixed-point residual fall below this.
    pub tol: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub sign: PrimalSign,
}

impl SolverConfig {
    /// Fixed uniform steps `α = ν = σ = step`.
    pub fn new(kind: SolverKind, n_players: usize, delta: f64, step: f64, oracle: OracleMode) -> Self {
        Self {
            kind,
            step: StepConfig { delta, steps: StepSizes::uniform(n_players, step), mode: StepMode::Fixed },
            oracle,
            max_iters: 1000,
            tol: None,
            seed: 0,
            sign: PrimalSign::default(),
        }
    }

    pub fn with_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: StepSizes) -> Self {
        self.step.steps = steps;
        self
    }

    pub fn with_mode(mut self, mode: StepMode) -> Self {
        self.step.mode = mode;
        self
    }

    pub fn with_sign(mut self, sign: PrimalSign) -> Self {
        self.sign = sign;
        self
    }

    /// Relaxation weight actually used by the iteration (`0` for unrelaxed methods).
    pub fn effective_delta(&self) -> f64 {
        if self.kind.is_relaxed() {
            self.step.delta
        } else {
            0.0
        }
    }
}

/// Checks applicability and parameter ranges. Hard failures are errors; departures from
/// the theoretical step bounds that do not prevent running are returned as warnings.
pub fn validate_config(game: &GameProblem, cfg: &SolverConfig) -> Result<Vec<String>> {
    let kind = cfg.kind;
    let bad = |why: &str| Err(Error::Unsupported(kind.name().into(), why.into()));
    cfg.step.steps.check(game.n_players())?;
    if let OracleMode::Saa(s) = &cfg.oracle {
        s.check()?;
    }
    let mut warnings = Vec::new();
    if let OracleMode::Saa(BatchSchedule { cap: Some(cap), .. }) = &cfg.oracle {
        warnings.push(format!("batch cap {cap} makes the sum of 1/S_k diverge; variance reduction stops at the cap"));
    }
    match kind {
        SolverKind::Srpfb | SolverKind::Spfb if !game.coupling().is_affine() => {
            return bad("requires affine coupling constraints");
        }
        SolverKind::SrfbNep if game.m() > 0 => return bad("requires a game without coupling constraints (m = 0)"),
        _ => {}
    }
    let needs_projection = matches!(kind, SolverKind::SrfbProjection | SolverKind::Srpfb | SolverKind::Spfb | SolverKind::SrfbNep);
    if needs_projection && !game.has_projectors() {
        return bad("requires indicator local terms (projections)");
    }
    match kind {
        SolverKind::SrfbNep => {
            let StepMode::Vanishing { gamma0, eta, offset } = cfg.step.mode else {
                return bad("requires a vanishing step rule");
            };
            check_vanishing(gamma0, eta)?;
            if !(offset >= 0.0) {
                return Err(Error::InvalidParameter(format!("offset = {offset} must be nonnegative")));
            }
            validate_delta(cfg.step.delta, DeltaRegime::Nep).map_err(|v| Error::InvalidParameter(v.message))?;
            if cfg.oracle != OracleMode::Sa {
                warnings.push("vanishing-step theory assumes the single-sample oracle".into());
            }
        }
        SolverKind::Srfb | SolverKind::SrfbProjection | SolverKind::Srpfb => {
            validate_delta(cfg.step.delta, DeltaRegime::Gnep).map_err(|v| Error::InvalidParameter(v.message))?;
        }
        _ => {}
    }
    if kind.uses_preconditioning() {
        let bounds = srpfb_step_bounds(game, DEFAULT_PSI_GAMMA, None, cfg.effective_delta().max(f64::MIN_POSITIVE))?;
        if let Err(v) = bounds.check(&cfg.step.steps) {
            warnings.push(format!("steps exceed the preconditioning bounds: {v}"));
        }
    }
    if kind != SolverKind::SrfbNep && cfg.step.mode != StepMode::Fixed {
        warnings.push(format!("{kind} uses fixed steps; the vanishing rule is ignored"));
    }
    Ok(warnings)
}
