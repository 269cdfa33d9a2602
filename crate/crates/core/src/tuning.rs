//! Parameter validation and derivation: relaxation range, step bounds, vanishing steps,
//! Lipschitz estimation and the instability-based tuner.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameProblem;
use crate::solvers::{run, RunOptions, SolverConfig};
use crate::splitting::{build_psi, extended_forward_a, Omega, StepSizes};

/// `φ = (1 + √5) / 2`.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Default `γ` of the preconditioned step bounds.
pub const DEFAULT_PSI_GAMMA: f64 = 0.1;

/// Iterations per instability probe.
pub const DEFAULT_PROBE_BUDGET: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum StepMode {
    Fixed,
    /// `γ_k = gamma0 / (k + 1 + offset)^eta`.
    Vanishing {
        gamma0: f64,
        eta: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl StepMode {
    pub fn gamma(&self, k: usize) -> Option<f64> {
        match *self {
            StepMode::Fixed => None,
            StepMode::Vanishing { gamma0, eta, offset } => Some(vanishing_step(gamma0, eta, offset, k)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub delta: f64,
    pub steps: StepSizes,
    pub mode: StepMode,
}

/// Which range applies to the relaxation parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaRegime {
    /// Fixed steps with coupling constraints: `1/φ ≤ δ ≤ 1`.
    Gnep,
    /// Vanishing steps without coupling: `0 < δ < 1`.
    Nep,
}

/// A parameter outside the range the convergence theory asks for.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub message: String,
}

impl Violation {
    fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn validate_delta(delta: f64, regime: DeltaRegime) -> std::result::Result<(), Violation> {
    let ok = match regime {
        DeltaRegime::Gnep => (1.0 / GOLDEN_RATIO..=1.0).contains(&delta),
        DeltaRegime::Nep => delta > 0.0 && delta < 1.0,
    };
    if ok {
        Ok(())
    } else {
        let range = match regime {
            DeltaRegime::Gnep => "[1/φ, 1] = [0.618034, 1]",
            DeltaRegime::Nep => "(0, 1)",
        };
        Err(Violation::new(format!("delta = {delta} outside {range}")))
    }
}

/// `1 / (2δ(2ℓ_Ā + 1))`, the largest admissible `‖Φ^{-1}‖` for the relaxed FB.
pub fn srfb_step_bound(ell_a: f64, delta: f64) -> Result<f64> {
    if !(ell_a > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("step bound needs ell > 0 and delta > 0, got {ell_a}, {delta}")));
    }
    Ok(1.0 / (2.0 * delta * (2.0 * ell_a + 1.0)))
}

pub fn check_srfb_steps(steps: &StepSizes, bound: f64) -> std::result::Result<(), Violation> {
    let max = steps.max_step();
    if max <= bound {
        Ok(())
    } else {
        Err(Violation::new(format!("largest step {max} exceeds the bound {bound}")))
    }
}

/// Per-agent step maxima of the preconditioned method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiBounds {
    pub alpha_max: Vec<f64>,
    pub nu_max: Vec<f64>,
    pub sigma_max: Vec<f64>,
    /// `1/(δ(2ℓ_C − 1))` when `ℓ_C > 1/2`.
    pub global_max: Option<f64>,
    pub warnings: Vec<String>,
}

impl PsiBounds {
    /// The largest compliant steps.
    pub fn steps(&self) -> StepSizes {
        let clip = |v: &[f64]| v.iter().map(|&s| self.global_max.map_or(s, |g| s.min(g))).collect();
        StepSizes { alpha: clip(&self.alpha_max), nu: clip(&self.nu_max), sigma: clip(&self.sigma_max) }
    }

    pub fn check(&self, steps: &StepSizes) -> std::result::Result<(), Violation> {
        let mut bad = Vec::new();
        for i in 0..self.alpha_max.len() {
            for (name, s, max) in [
                ("alpha", steps.alpha[i], self.alpha_max[i]),
                ("nu", steps.nu[i], self.nu_max[i]),
                ("sigma", steps.sigma[i], self.sigma_max[i]),
            ] {
                if s > max {
                    bad.push(format!("{name}[{i}] = {s} > {max}"));
                }
            }
        }
        if let Some(g) = self.global_max {
            if steps.max_step() > g {
                bad.push(format!("largest step {} > {g}", steps.max_step()));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Violation::new(bad.join("; ")))
        }
    }
}

/// Diagonal-dominance step bounds making `Ψ − γI` positive semidefinite.
pub fn srpfb_step_bounds(game: &GameProblem, gamma: f64, ell_c: Option<f64>, delta: f64) -> Result<PsiBounds> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let coupling = game.coupling();
    if !coupling.is_affine() {
        return Err(Error::NonlinearCoupling("preconditioned step bounds"));
    }
    let np = game.n_players();
    let m = game.m();
    let mut bounds = PsiBounds {
        alpha_max: Vec::with_capacity(np),
        nu_max: Vec::with_capacity(np),
        sigma_max: Vec::with_capacity(np),
        global_max: None,
        warnings: Vec::new(),
    };
    for i in 0..np {
        let d = game.graph().degree(i);
        let (col_sum, row_sum) = match coupling.as_affine() {
            Some(a) => {
                let ai = a.block(i);
                // Rows of A_iᵀ are the columns of A_i.
                let cols = (0..ai.ncols()).map(|c| ai.column(c).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                let rows = (0..ai.nrows()).map(|r| ai.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                (cols, rows)
            }
            None => (0.0, 0.0),
        };
        let d = if m > 0 { d } else { 0.0 };
        bounds.alpha_max.push(1.0 / (gamma + col_sum));
        bounds.nu_max.push(1.0 / (gamma + 2.0 * d));
        bounds.sigma_max.push(1.0 / (gamma + 2.0 * d + row_sum));
    }
    match ell_c {
        Some(l) if l > 0.5 => bounds.global_max = Some(1.0 / (delta * (2.0 * l - 1.0))),
        Some(l) => bounds
            .warnings
            .push(format!("global bound skipped: ell_C = {l} <= 1/2 makes 1/(delta(2 ell_C - 1)) ill-posed")),
        None => bounds.warnings.push("global bound skipped: ell_C not supplied".into()),
    }
    Ok(bounds)
}

/// Smallest eigenvalue of `Ψ` for the given steps.
pub fn psi_min_eigenvalue(game: &GameProblem, steps: &StepSizes) -> Result<f64> {
    Ok(build_psi(game, steps)?.psi_min_eig.expect("psi built"))
}

pub fn vanishing_step(gamma0: f64, eta: f64, offset: f64, k: usize) -> f64 {
    gamma0 / (k as f64 + 1.0 + offset).powf(eta)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VanishingReport {
    pub steps: Vec<f64>,
    pub sum: f64,
    pub sum_sq: f64,
    /// `Σ γ_k² ‖ε_k‖²` when error norms were supplied.
    pub weighted_error: Option<f64>,
    /// Whether the partial sum exceeds `divergence_threshold`.
    pub sum_exceeds: bool,
}

pub fn check_vanishing(gamma0: f64, eta: f64) -> Result<()> {
    if !(eta > 0.5 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!("eta = {eta} outside (0.5, 1]: steps not square summable or not divergent")));
    }
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma0 = {gamma0} must be positive")));
    }
    Ok(())
}

pub fn vanishing_steps(
    gamma0: f64,
    eta: f64,
    offset: f64,
    count: usize,
    errors: Option<&[f64]>,
    divergence_threshold: f64,
) -> Result<VanishingReport> {
    check_vanishing(gamma0, eta)?;
    if !(offset >= 0.0) {
        return Err(Error::InvalidParameter(format!("offset = {offset} must be nonnegative")));
    }
    let steps: Vec<f64> = (0..count).map(|k| vanishing_step(gamma0, eta, offset, k)).collect();
    // Summing small terms first keeps the long partial sums accurate.
    let sum: f64 = steps.iter().rev().sum();
    let sum_sq: f64 = steps.iter().rev().map(|g| g * g).sum();
    let weighted_error = errors.map(|e| steps.iter().zip(e).map(|(g, e)| g * g * e * e).sum());
    Ok(VanishingReport { steps, sum, sum_sq, weighted_error, sum_exceeds: sum > divergence_threshold })
}

/// Safety factor applied to the largest observed difference quotient.
pub const LIPSCHITZ_SAFETY: f64 = 1.2;

/// `1.2 · max ‖T(u) − T(v)‖ / ‖u − v‖` over `trials` sampled pairs.
pub fn estimate_lipschitz(
    op: impl Fn(&DVector<f64>) -> DVector<f64>,
    mut sampler: impl FnMut() -> DVector<f64>,
    trials: usize,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 trials, got {trials}")));
    }
    let mut best: f64 = 0.0;
    let mut distinct = false;
    for _ in 0..trials {
        let u = sampler();
        let v = sampler();
        let d = (&u - &v).norm();
        if d == 0.0 {
            continue;
        }
        distinct = true;
        best = best.max((op(&u) - op(&v)).norm() / d);
    }
    if !distinct {
        return Err(Error::InvalidParameter("sampler produced only identical points".into()));
    }
    Ok(LIPSCHITZ_SAFETY * best)
}

/// Sampled Lipschitz constant of the extended operator `Ā` with the exact pseudogradient,
/// over points spread around the start point (primal block kept feasible, `λ ≥ 0`).
pub fn estimate_extended_lipschitz(game: &GameProblem, seed: u64) -> Result<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let n = game.n();
    let dual = game.n_players() * game.m();
    let scale = game.start().amax().max(1.0);
    let mut rng = crate::rng::setup_rng(seed);
    let mut draw = |len: usize| -> DVector<f64> {
        DVector::from_fn(len, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            scale * g
        })
    };
    let mut points = Vec::with_capacity(400);
    for _ in 0..400 {
        let x = game.project_local((game.start() + draw(n)).as_slice());
        let z = draw(dual);
        let lambda = draw(dual).abs();
        points.push(Omega::new(x, z, lambda));
    }
    let to_split = |v: &DVector<f64>| Omega::from_vector(game, v);
    let failure = std::cell::RefCell::new(None);
    let op = |v: &DVector<f64>| {
        let w = to_split(v);
        let f = crate::oracle::exact_pseudogradient(game, w.x.as_slice()).and_then(|f| extended_forward_a(game, &w, &f));
        match f {
            Ok(a) => a.to_vector(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                DVector::zeros(v.len())
            }
        }
    };
    let mut it = points.iter().map(Omega::to_vector);
    let estimate = estimate_lipschitz(op, || it.next().unwrap(), 200)?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(estimate),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedStep {
    pub step: f64,
    /// Smallest grid step whose probe diverged.
    pub unstable: Option<f64>,
    /// No probe diverged; `step` is the largest grid value.
    pub no_instability: bool,
}

/// Half the smallest grid step whose probe diverges, else the largest grid step (flagged).
/// Probes run in ascending order and stop at the first divergence.
pub fn instability_tuner(grid: &[f64], mut diverges: impl FnMut(f64) -> bool) -> Result<TunedStep> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty step grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &s in &sorted {
        if diverges(s) {
            return Ok(TunedStep { step: s / 2.0, unstable: Some(s), no_instability: false });
        }
    }
    Ok(TunedStep { step: *sorted.last().unwrap(), unstable: None, no_instability: true })
}

/// Tunes a uniform step `α = ν = σ = s` for `base` on `game` by probing each grid value
/// for `probe_budget` iterations with the same oracle and seed.
pub fn tune_uniform_step(game: &GameProblem, base: &SolverConfig, grid: &[f64], probe_budget: usize) -> Result<TunedStep> {
    tune_scaled_steps(game, base, &StepSizes::uniform(game.n_players(), 1.0), grid, probe_budget)
}

/// Same as [`tune_uniform_step`] for steps `s · shape`, so the ratios between the primal,
/// auxiliary and dual steps stay fixed while the common scale `s` is tuned.
pub fn tune_scaled_steps(
    game: &GameProblem,
    base: &SolverConfig,
    shape: &StepSizes,
    grid: &[f64],
    probe_budget: usize,
) -> Result<TunedStep> {
    shape.check(game.n_players())?;
    let mut failure = None;
    let tuned = instability_tuner(grid, |s| {
        let cfg = base.clone().with_steps(shape.scaled(s)).with_iters(probe_budget);
        match run(game, &cfg, &RunOptions::default()) {
            Ok(r) => r.diverged(),
            Err(e) => {
                failure.get_or_insert(e);
                true
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(tuned),
    }
}

/// `count` points `start · ratio^j`.
pub fn geometric_grid(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| start * ratio.powi(j as i32)).collect()
}
