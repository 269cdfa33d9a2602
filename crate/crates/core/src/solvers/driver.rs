use std::time::Instant;

use nalgebra::DVector;

use super::{step, validate_config, SolverConfig};
use crate::diagnostics::{consensus_gap, feasibility_gap, CounterLog, Counters, IdentityMonitor, MetricRow, RunRecord, RunStatus};
use crate::error::Result;
use crate::game::GameProblem;
use crate::oracle::batch_mean_at;
use crate::rng::Site;
use crate::splitting::{dual_augmented_residual, fixed_point_residual, residual, IterateState, Omega, StepSizes};

/// Samples of the residual estimate when no exact pseudogradient exists.
pub const FALLBACK_SAMPLES: u64 = 10_000;
/// Iterations between refreshes of the sampled residual estimate.
pub const FALLBACK_REFRESH: usize = 100;
/// Divergence when `‖ω‖` exceeds this multiple of `max(‖ω^0‖, 1)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Reference primal solution for the distance column.
    pub reference: Option<DVector<f64>>,
    /// Initial extended iterate; defaults to `(x0, 0, 0)` with the game's start point.
    pub initial: Option<Omega>,
    /// Record wall-clock time per row (otherwise 0, keeping outputs reproducible).
    pub timing: bool,
    /// Track the relaxation identities along the trajectory.
    pub monitor_identities: bool,
}

struct Metrics<'a> {
    game: &'a GameProblem,
    steps: StepSizes,
    reference: Option<&'a DVector<f64>>,
    seed: u64,
    cached_f: Option<(usize, DVector<f64>)>,
}

impl Metrics<'_> {
    fn f_at(&mut self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        if self.game.has_exact_pseudogradient() {
            return crate::oracle::exact_pseudogradient(self.game, x.as_slice());
        }
        if let Some((at, f)) = &self.cached_f {
            if k < at + FALLBACK_REFRESH {
                return Ok(f.clone());
            }
        }
        let f = sampled_f(self.game, x, k, self.seed);
        self.cached_f = Some((k, f.clone()));
        Ok(f)
    }

    fn row(&mut self, k: usize, omega: &Omega, counters: &Counters, batch: u64, wall_ms: u64) -> Result<MetricRow> {
        let f = self.f_at(&omega.x, k)?;
        let game = self.game;
        Ok(MetricRow {
            k,
            residual: dual_augmented_residual(game, &omega.x, &omega.lambda, &f),
            primal_residual: residual(game, &omega.x, &f),
            fixed_point_residual: fixed_point_residual(game, &self.steps, omega, &f)?,
            dist_to_ref: self.reference.map(|r| (&omega.x - r).norm()),
            feasibility_gap: feasibility_gap(game, omega.x.as_slice()).unwrap_or(0.0),
            consensus_gap: consensus_gap(omega.lambda.as_slice(), game.n_players()),
            prox_calls: counters.prox,
            f_hat_calls: counters.f_hat,
            grad_sample_calls: counters.grad_samples,
            batch_s: batch,
            wall_ms,
        })
    }
}

fn sampled_f(game: &GameProblem, x: &DVector<f64>, k: usize, seed: u64) -> DVector<f64> {
    batch_mean_at(game, x.as_slice(), k, FALLBACK_SAMPLES, seed, Site::Diagnostics).value
}

/// Iterates `cfg.kind` from the initial state until the stopping rule holds, the
/// iteration budget is exhausted, or the iterate diverges. One metric row is emitted for
/// the initial state and after every iteration.
pub fn run(game: &GameProblem, cfg: &SolverConfig, opts: &RunOptions) -> Result<RunRecord> {
    validate_config(game, cfg)?;
    let initial = opts.initial.clone().unwrap_or_else(|| IterateState::new(game, game.start().clone()).omega);
    let mut state = IterateState::from_omega(initial);
    let limit = DIVERGENCE_FACTOR * state.omega.norm().max(1.0);
    // The NEP method has no fixed Φ; its fixed-point residual uses the first step size.
    let steps = match cfg.step.mode.gamma(0) {
        Some(g) if cfg.kind == super::SolverKind::SrfbNep => StepSizes::uniform(game.n_players(), g),
        _ => cfg.step.steps.clone(),
    };
    let mut metrics = Metrics { game, steps, reference: opts.reference.as_ref(), seed: cfg.seed, cached_f: None };
    let mut counters = Counters::default();
    let mut log = CounterLog::default();
    let mut monitor = opts.monitor_identities.then(IdentityMonitor::default);
    let delta = cfg.effective_delta();
    let clock = Instant::now();
    let elapsed = |on: bool| if on { clock.elapsed().as_millis() as u64 } else { 0 };

    let mut rows = vec![metrics.row(0, &state.omega, &counters, 0, elapsed(opts.timing))?];
    let converged = |r: &MetricRow| cfg.tol.is_some_and(|t| r.residual <= t && r.fixed_point_residual <= t);
    let mut status = if converged(&rows[0]) { RunStatus::Converged } else { RunStatus::Budget };

    if status == RunStatus::Budget {
        for k in 0..cfg.max_iters {
            let before = counters;
            let out = step(game, &state, cfg, k, &mut counters)?;
            log.push(&before, &counters);
            if let Some(m) = monitor.as_mut() {
                m.observe(&state.omega, &state.omega_bar, &out.state.omega_bar, delta);
            }
            state = out.state;
            if !state.omega.is_finite() || state.omega.norm() > limit {
                status = RunStatus::Diverged { iteration: k + 1 };
                break;
            }
            let row = metrics.row(k + 1, &state.omega, &counters, out.batch, elapsed(opts.timing))?;
            let done = converged(&row);
            rows.push(row);
            if done {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    Ok(RunRecord { kind: cfg.kind, seed: cfg.seed, status, rows, counters: log, identities: monitor, final_omega: state.omega })
}
