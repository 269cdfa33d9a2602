use nalgebra::DVector;

use super::{SolverConfig, SolverKind};
use crate::diagnostics::Counters;
use crate::error::{Error, Result};
use crate::game::GameProblem;
use crate::oracle::approx_pseudogradient;
use crate::splitting::{
    apply_laplacian, extended_forward_a, project_dual, resolvent_b, resolvent_b_projection, IterateState, Omega,
    StepSizes,
};

/// New state plus the per-agent batch size used by the step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: IterateState,
    pub batch: u64,
}

/// One `F̂` evaluation at `x`, accounted in `counters`.
fn f_hat(game: &GameProblem, x: &DVector<f64>, cfg: &SolverConfig, k: usize, call: u32, counters: &mut Counters) -> (DVector<f64>, u64) {
    let a = approx_pseudogradient(game, x.as_slice(), &cfg.oracle, k, cfg.seed, call);
    counters.f_hat += 1;
    counters.grad_samples += a.grad_samples;
    (a.value, a.batch)
}

/// `ω̄^k = (1 − δ) ω^k + δ ω̄^{k-1}`.
fn averaged(state: &IterateState, delta: f64) -> Omega {
    state.omega.relax(delta, &state.omega_bar)
}

fn advance(state: &IterateState, next: Omega, bar: Omega) -> IterateState {
    IterateState { omega: next, omega_bar: bar, previous: state.omega.clone() }
}

/// `J_B(base − Φ^{-1} Ā(at; F))`, one prox pass.
fn forward_backward(
    game: &GameProblem,
    steps: &StepSizes,
    base: &Omega,
    at: &Omega,
    f: &DVector<f64>,
    projection: bool,
    counters: &mut Counters,
) -> Result<Omega> {
    let a = extended_forward_a(game, at, f)?;
    let v = base.sub(&steps.apply_inverse_phi(game, &a));
    counters.prox += 1;
    if projection {
        resolvent_b_projection(game, &v)
    } else {
        Ok(resolvent_b(game, steps, &v))
    }
}

/// Relaxed forward-backward step on the extended iterate:
/// `ω^{k+1} = J_B(ω̄^k − Φ^{-1} Â(ω^k))`.
pub fn srfb_gnep_step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    srfb_common(game, state, cfg, k, counters, false)
}

/// [`srfb_gnep_step`] with the primal block projected onto `Ω`.
pub fn srfb_projection_step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    srfb_common(game, state, cfg, k, counters, true)
}

fn srfb_common(
    game: &GameProblem,
    state: &IterateState,
    cfg: &SolverConfig,
    k: usize,
    counters: &mut Counters,
    projection: bool,
) -> Result<StepOutput> {
    let bar = averaged(state, cfg.step.delta);
    let (f, batch) = f_hat(game, &state.omega.x, cfg, k, 0, counters);
    let next = forward_backward(game, &cfg.step.steps, &bar, &state.omega, &f, projection, counters)?;
    Ok(StepOutput { state: advance(state, next, bar), batch })
}

/// Preconditioned step in staged form. The primal and auxiliary updates use `λ^k`; the
/// dual update uses the fresh `x^{k+1}`, `z^{k+1}` through the reflections
/// `2x^{k+1} − x^k` and `2z^{k+1} − z^k`. With `delta = 0` this is the unrelaxed method.
pub fn srpfb_step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    preconditioned(game, state, cfg, cfg.step.delta, k, counters)
}

fn preconditioned(
    game: &GameProblem,
    state: &IterateState,
    cfg: &SolverConfig,
    delta: f64,
    k: usize,
    counters: &mut Counters,
) -> Result<StepOutput> {
    if !game.coupling().is_affine() {
        return Err(Error::NonlinearCoupling("the preconditioned forward-backward step"));
    }
    let steps = &cfg.step.steps;
    let sign = cfg.sign.factor();
    let (m, np) = (game.m(), game.n_players());
    let bar = averaged(state, delta);
    let w = &state.omega;
    let (f, batch) = f_hat(game, &w.x, cfg, k, 0, counters);

    let mut x_arg = bar.x.clone();
    let mut dir = f;
    if let Some(a) = game.coupling().as_affine() {
        for i in 0..np {
            let r = game.block(i);
            let mut t = vec![0.0; r.len()];
            a.add_transpose_into(i, &w.lambda.as_slice()[game.dual_block(i)], &mut t);
            for (d, tv) in dir.as_mut_slice()[r].iter_mut().zip(&t) {
                *d += sign * tv;
            }
        }
    }
    for i in 0..np {
        let r = game.block(i);
        for c in r {
            x_arg[c] -= steps.alpha[i] * dir[c];
        }
    }
    let mut x_next = DVector::zeros(game.n());
    for i in 0..np {
        let r = game.block(i);
        game.local(i).project(i, &x_arg.as_slice()[r.clone()], &mut x_next.as_mut_slice()[r])?;
    }
    counters.prox += 1;

    let l_lambda = apply_laplacian(game, &w.lambda);
    let mut z_next = bar.z.clone();
    for i in 0..np {
        for r in game.dual_block(i) {
            z_next[r] -= steps.nu[i] * l_lambda[r];
        }
    }

    // Second exchange: neighbours' fresh z are needed for the reflected Laplacian term.
    let l_z_next = apply_laplacian(game, &z_next);
    let l_z = apply_laplacian(game, &w.z);
    let mut lambda_next = bar.lambda.clone();
    if let Some(a) = game.coupling().as_affine() {
        let mut ax = vec![0.0; m];
        for i in 0..np {
            let r = game.block(i);
            let reflected: Vec<f64> = r.clone().map(|c| 2.0 * x_next[c] - w.x[c]).collect();
            a.value_into(i, &reflected, &mut ax);
            for (row, d) in game.dual_block(i).enumerate() {
                lambda_next[d] += steps.sigma[i] * (ax[row] + 2.0 * l_z_next[d] - l_z[d] - l_lambda[d]);
            }
        }
    }
    project_dual(&mut lambda_next);
    let next = Omega::new(x_next, z_next, lambda_next);
    Ok(StepOutput { state: advance(state, next, bar), batch })
}

/// Relaxed projected step with vanishing step size for games without coupling:
/// `x^{k+1} = proj(x̄^k − γ_k F̂(x^k))`.
pub fn srfb_nep_step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    if game.m() > 0 {
        return Err(Error::Unsupported(SolverKind::SrfbNep.name().into(), "coupling constraints present".into()));
    }
    let gamma = cfg
        .step
        .mode
        .gamma(k)
        .ok_or_else(|| Error::InvalidParameter("vanishing step rule required".into()))?;
    let bar = averaged(state, cfg.step.delta);
    let (f, batch) = f_hat(game, &state.omega.x, cfg, k, 0, counters);
    let arg = &bar.x - gamma * f;
    let mut x_next = DVector::zeros(game.n());
    for i in 0..game.n_players() {
        let r = game.block(i);
        game.local(i).project(i, &arg.as_slice()[r.clone()], &mut x_next.as_mut_slice()[r])?;
    }
    counters.prox += 1;
    let next = Omega { x: x_next, ..state.omega.clone() };
    Ok(StepOutput { state: advance(state, next, bar), batch })
}

/// Comparison methods with fixed steps.
pub fn baseline_step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    let steps = &cfg.step.steps;
    let w = &state.omega;
    let keep_bar = |next: Omega| IterateState { omega: next.clone(), omega_bar: next, previous: w.clone() };
    match cfg.kind {
        SolverKind::Spfb => preconditioned(game, state, cfg, 0.0, k, counters),
        SolverKind::Seg => {
            let (f, batch) = f_hat(game, &w.x, cfg, k, 0, counters);
            let half = forward_backward(game, steps, w, w, &f, false, counters)?;
            let (f_half, _) = f_hat(game, &half.x, cfg, k, 1, counters);
            let next = forward_backward(game, steps, w, &half, &f_half, false, counters)?;
            Ok(StepOutput { state: keep_bar(next), batch })
        }
        SolverKind::Sfbf => {
            let (f, batch) = f_hat(game, &w.x, cfg, k, 0, counters);
            let a = extended_forward_a(game, w, &f)?;
            let half = resolvent_b(game, steps, &w.sub(&steps.apply_inverse_phi(game, &a)));
            counters.prox += 1;
            let (f_half, _) = f_hat(game, &half.x, cfg, k, 1, counters);
            let a_half = extended_forward_a(game, &half, &f_half)?;
            let mut next = half.sub(&steps.apply_inverse_phi(game, &a_half.sub(&a)));
            // Keeps the multipliers admissible; the primal block stays unprojected.
            project_dual(&mut next.lambda);
            Ok(StepOutput { state: keep_bar(next), batch })
        }
        SolverKind::Sprg => {
            let reflected = w.scale(2.0).sub(&state.previous);
            let (f, batch) = f_hat(game, &reflected.x, cfg, k, 0, counters);
            let next = forward_backward(game, steps, w, &reflected, &f, false, counters)?;
            Ok(StepOutput { state: keep_bar(next), batch })
        }
        other => Err(Error::Unsupported(other.name().into(), "not a baseline".into())),
    }
}

/// Dispatches on `cfg.kind`.
pub fn step(game: &GameProblem, state: &IterateState, cfg: &SolverConfig, k: usize, counters: &mut Counters) -> Result<StepOutput> {
    match cfg.kind {
        SolverKind::Srfb => srfb_gnep_step(game, state, cfg, k, counters),
        SolverKind::SrfbProjection => srfb_projection_step(game, state, cfg, k, counters),
        SolverKind::Srpfb => srpfb_step(game, state, cfg, k, counters),
        SolverKind::SrfbNep => srfb_nep_step(game, state, cfg, k, counters),
        _ => baseline_step(game, state, cfg, k, counters),
    }
}
