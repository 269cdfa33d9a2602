//! Sampled checks of the structural assumptions that can be verified from black-box oracles.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Coupling, GameProblem};
use crate::rng::{setup_rng, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail,
    /// Check does not apply to this game (e.g. no exact oracle).
    Skipped,
    /// Property cannot be checked from oracles and is asserted by the caller.
    Asserted,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub outcome: CheckOutcome,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome != CheckOutcome::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| c.outcome == CheckOutcome::Fail)
    }

    fn push(&mut self, name: &'static str, outcome: CheckOutcome, detail: impl Into<String>) {
        self.checks.push(ValidationCheck { name, outcome, detail: detail.into() });
    }

    fn pass_fail(&mut self, name: &'static str, ok: bool, detail: impl Into<String>) {
        let outcome = if ok { CheckOutcome::Pass } else { CheckOutcome::Fail };
        self.push(name, outcome, detail);
    }
}

/// Sampling budget of [`validate_game_with`].
#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub seed: u64,
    pub prox_pairs: usize,
    pub jacobian_points: usize,
    pub gradient_points: usize,
    pub gradient_samples: usize,
    /// Two-sided standard-error multiple for a single comparison; widened over the
    /// whole family of compared coordinates.
    pub gradient_se: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            prox_pairs: 200,
            jacobian_points: 20,
            gradient_points: 2,
            gradient_samples: 10_000,
            gradient_se: 3.0,
        }
    }
}

pub fn validate_game(game: &GameProblem) -> ValidationReport {
    validate_game_with(game, &ValidationOptions::default())
}

pub fn validate_game_with(game: &GameProblem, opts: &ValidationOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut rng = setup_rng(opts.seed);
    let graph = game.graph();

    report.pass_fail(
        "graph_symmetry",
        graph.is_symmetric(),
        "weights symmetric with zero diagonal",
    );
    report.pass_fail("graph_connectivity", graph.is_connected(), "breadth-first search reaches every node");
    check_dimensions(game, &mut report);
    check_prox(game, opts, &mut rng, &mut report);
    check_jacobian(game, opts, &mut rng, &mut report);
    check_gradient(game, opts, &mut rng, &mut report);
    report.push("convexity", CheckOutcome::Asserted, "not machine-checkable, asserted by caller");
    report.push("slater", CheckOutcome::Asserted, "not machine-checkable, asserted by caller");
    report
}

fn check_dimensions(game: &GameProblem, report: &mut ValidationReport) {
    let n_total: usize = game.dims().iter().sum();
    let mut problems = Vec::new();
    if n_total != game.n() {
        problems.push(format!("sum of dims {n_total} != n {}", game.n()));
    }
    if game.start().len() != game.n() {
        problems.push("start point has wrong length".to_string());
    }
    let x = game.start().as_slice();
    for i in 0..game.n_players() {
        let d = game.dims()[i];
        let mut buf = vec![0.0; d];
        let mut xi = vec![0.0; game.oracle().noise_dim(i)];
        let mut r = setup_rng(0);
        game.oracle().sample_noise(i, &mut r, &mut xi);
        game.oracle().sampled_gradient(i, x, &xi, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            problems.push(format!("player {i}: sampled gradient at the start point is not finite"));
        }
        let jac = game.coupling().jacobian(i, &x[game.block(i)]);
        if game.m() > 0 && (jac.nrows() != game.m() || jac.ncols() != d) {
            problems.push(format!("player {i}: coupling Jacobian is {}x{}", jac.nrows(), jac.ncols()));
        }
    }
    let detail = if problems.is_empty() { "block sizes consistent".to_string() } else { problems.join("; ") };
    report.pass_fail("dimensions", problems.is_empty(), detail);
}

fn normal_vec(rng: &mut StreamRng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| { let s: f64 = StandardNormal.sample(rng); scale * s }).collect()
}

fn norm_sq(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum()
}

/// Firm nonexpansiveness: `‖p(u)−p(v)‖² ≤ ‖u−v‖² − ‖(u−p(u))−(v−p(v))‖²`.
fn check_prox(game: &GameProblem, opts: &ValidationOptions, rng: &mut StreamRng, report: &mut ValidationReport) {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..opts.prox_pairs {
        let i = rng.random_range(0..game.n_players());
        let d = game.dims()[i];
        let scale = 10f64.powf(rng.random_range(-1.0..1.5));
        let u = normal_vec(rng, d, scale);
        let v = normal_vec(rng, d, scale);
        let step = 10f64.powf(rng.random_range(-2.0..0.5));
        let mut pu = vec![0.0; d];
        let mut pv = vec![0.0; d];
        game.local(i).prox(&u, step, &mut pu);
        game.local(i).prox(&v, step, &mut pv);
        let lhs = norm_sq((0..d).map(|c| pu[c] - pv[c]));
        let rhs = norm_sq((0..d).map(|c| u[c] - v[c])) - norm_sq((0..d).map(|c| (u[c] - pu[c]) - (v[c] - pv[c])));
        let scale_sq = norm_sq(u.iter().chain(&v).copied()).max(1.0);
        worst = worst.max((lhs - rhs) / scale_sq);

        // Resolvent identity p_{2s}(u) = p_s(u/2 + p_{2s}(u)/2). Firm nonexpansiveness alone
        // admits maps such as a constant shift, which are not proximal for any step family.
        let mut p2 = vec![0.0; d];
        game.local(i).prox(&u, 2.0 * step, &mut p2);
        let mid: Vec<f64> = (0..d).map(|c| 0.5 * u[c] + 0.5 * p2[c]).collect();
        let mut back = vec![0.0; d];
        game.local(i).prox(&mid, step, &mut back);
        let gap = norm_sq((0..d).map(|c| back[c] - p2[c])).sqrt() / norm_sq(u.iter().copied()).sqrt().max(1.0);
        worst_identity = worst_identity.max(gap);
    }
    report.pass_fail(
        "prox_firmly_nonexpansive",
        worst <= 1e-10 && worst_identity <= 1e-8,
        format!(
            "worst relative excess {worst:.3e}, worst resolvent-identity gap {worst_identity:.3e} over {} pairs",
            opts.prox_pairs
        ),
    );
}

fn check_jacobian(game: &GameProblem, opts: &ValidationOptions, rng: &mut StreamRng, report: &mut ValidationReport) {
    let Coupling::Separable { constraint, m, .. } = game.coupling() else {
        let detail = if game.m() == 0 { "no coupling" } else { "affine coupling, Jacobian exact by construction" };
        report.push("coupling_jacobian", CheckOutcome::Skipped, detail);
        return;
    };
    let m = *m;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.jacobian_points {
        let x = game.project_local(&normal_vec(rng, game.n(), 1.0));
        for i in 0..game.n_players() {
            let xi = &x.as_slice()[game.block(i)];
            let jac = constraint.jacobian(i, xi);
            let mut fd = nalgebra::DMatrix::zeros(m, xi.len());
            let mut plus = vec![0.0; m];
            let mut minus = vec![0.0; m];
            for c in 0..xi.len() {
                let h = f64::EPSILON.cbrt() * xi[c].abs().max(1.0);
                let mut p = xi.to_vec();
                p[c] += h;
                constraint.value(i, &p, &mut plus);
                p[c] = xi[c] - h;
                constraint.value(i, &p, &mut minus);
                for r in 0..m {
                    fd[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
                }
            }
            let rel = (&jac - &fd).norm() / jac.norm().max(1.0);
            worst = worst.max(rel);
        }
    }
    report.pass_fail("coupling_jacobian", worst <= 1e-6, format!("worst relative error {worst:.3e}"));
}

/// Compares the exact pseudogradient with the mean of sampled gradients. Each coordinate
/// is tested at `gradient_se` standard errors, widened (Šidák) so that the family-wise
/// false-alarm rate equals that of a single comparison.
fn check_gradient(game: &GameProblem, opts: &ValidationOptions, rng: &mut StreamRng, report: &mut ValidationReport) {
    let oracle = game.oracle();
    if !oracle.has_exact() {
        report.push("gradient_agreement", CheckOutcome::Skipped, "no exact pseudogradient");
        return;
    }
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let family = (opts.gradient_points * game.n()).max(1) as f64;
    let single_alpha = 2.0 * (1.0 - std_normal.cdf(opts.gradient_se));
    let alpha = 1.0 - (1.0 - single_alpha).powf(1.0 / family);
    let threshold = std_normal.inverse_cdf(1.0 - alpha / 2.0);

    let mut worst_z: f64 = 0.0;
    let mut failures = 0usize;
    let s = opts.gradient_samples;
    for _ in 0..opts.gradient_points {
        let x = game.project_local(&normal_vec(rng, game.n(), 1.0));
        let x = x.as_slice();
        for i in 0..game.n_players() {
            let d = game.dims()[i];
            let mut exact = vec![0.0; d];
            if oracle.exact_gradient(i, x, &mut exact).is_err() {
                failures += 1;
                continue;
            }
            let mut xi = vec![0.0; oracle.noise_dim(i)];
            let mut g = vec![0.0; d];
            let mut sum = vec![0.0; d];
            let mut sum_sq = vec![0.0; d];
            for _ in 0..s {
                oracle.sample_noise(i, rng, &mut xi);
                oracle.sampled_gradient(i, x, &xi, &mut g);
                for c in 0..d {
                    // Centering on the exact value keeps the variance accumulation stable.
                    let e = g[c] - exact[c];
                    sum[c] += e;
                    sum_sq[c] += e * e;
                }
            }
            for c in 0..d {
                let mean = sum[c] / s as f64;
                let var = ((sum_sq[c] - s as f64 * mean * mean) / (s as f64 - 1.0)).max(0.0);
                let se = (var / s as f64).sqrt();
                let tol_abs = 1e-9 * exact[c].abs().max(1.0);
                if se <= tol_abs {
                    if mean.abs() > tol_abs {
                        failures += 1;
                        worst_z = f64::INFINITY;
                    }
                    continue;
                }
                let z = mean.abs() / se;
                worst_z = worst_z.max(z);
                if z > threshold {
                    failures += 1;
                }
            }
        }
    }
    report.pass_fail(
        "gradient_agreement",
        failures == 0,
        format!(
            "{failures} coordinates outside {threshold:.2} standard errors (worst {worst_z:.2}) at {s} samples"
        ),
    );
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::game::{ClosureOracle, LocalTerm, MultiplierGraph, ProxOperator};

    struct Shift;

    impl ProxOperator for Shift {
        fn prox(&self, v: &[f64], _step: f64, out: &mut [f64]) {
            for (o, x) in out.iter_mut().zip(v) {
                *o = x + 1.0;
            }
        }
    }

    fn game_with(local: LocalTerm, graph: MultiplierGraph) -> GameProblem {
        let oracle = ClosureOracle::deterministic(2, |i, x, out: &mut [f64]| out[0] = x[i] - 1.0);
        GameProblem::new("t", vec![1, 1], vec![local, LocalTerm::Free(1)], Coupling::None, graph, Arc::new(oracle)).unwrap()
    }

    #[test]
    fn well_formed_game_passes() {
        let g = game_with(LocalTerm::Box { lower: vec![0.0], upper: vec![1.0] }, MultiplierGraph::cycle(2).unwrap());
        let r = validate_game(&g);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.get("convexity").unwrap().outcome, CheckOutcome::Asserted);
    }

    #[test]
    fn asymmetric_graph_fails_symmetry() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let g = game_with(LocalTerm::Free(1), MultiplierGraph::from_weights(w).unwrap());
        let r = validate_game(&g);
        assert_eq!(r.get("graph_symmetry").unwrap().outcome, CheckOutcome::Fail);
        assert_eq!(r.get("graph_connectivity").unwrap().outcome, CheckOutcome::Pass);
    }

    #[test]
    fn shift_is_not_a_prox() {
        let g = game_with(LocalTerm::Prox { dim: 1, op: Arc::new(Shift) }, MultiplierGraph::cycle(2).unwrap());
        let r = validate_game(&g);
        assert_eq!(r.get("prox_firmly_nonexpansive").unwrap().outcome, CheckOutcome::Fail);
    }

    #[test]
    fn biased_sampler_is_caught() {
        let oracle = ClosureOracle::new(
            vec![1, 1],
            |_, rng: &mut StreamRng, xi: &mut [f64]| xi[0] = StandardNormal.sample(rng),
            |i, x, xi, out| out[0] = x[i] + 0.1 * xi[0] + 0.01,
        )
        .with_exact(|i, x, out| out[0] = x[i]);
        let g = GameProblem::new(
            "b",
            vec![1, 1],
            vec![LocalTerm::Free(1), LocalTerm::Free(1)],
            Coupling::None,
            MultiplierGraph::cycle(2).unwrap(),
            Arc::new(oracle),
        )
        .unwrap();
        let r = validate_game(&g);
        assert_eq!(r.get("gradient_agreement").unwrap().outcome, CheckOutcome::Fail);
    }
}
