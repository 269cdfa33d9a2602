//! Strongly monotone quadratic game `F(x) = Qx + q` with one shared budget
//! `Σ x_i ≤ cap`, solved in closed form by enumerating the active set.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AffineCoupling, ClosureOracle, Coupling, GameProblem, GameProperties, LocalTerm, MultiplierGraph};
use crate::rng::{setup_rng, StreamRng};
use crate::splitting::min_eigenvalue;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticParams {
    pub n_players: usize,
    pub cap: f64,
    /// Std of the additive Gaussian noise on every gradient coordinate.
    pub noise_std: f64,
    /// Instances with more than two players draw `Q` and `q` from this seed.
    pub seed: u64,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        Self { n_players: 2, cap: 1.0, noise_std: 0.0, seed: 0 }
    }
}

/// Variational equilibrium: primal point and the shared multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct KktSolution {
    pub x: DVector<f64>,
    pub lambda: f64,
}

/// `Q`, `q` of the instance: `Q = I`, `q = −1` for two players; otherwise a random
/// symmetric positive definite `Q = I + MᵀM / N` and Gaussian `q`.
pub fn quadratic_data(params: &QuadraticParams) -> (DMatrix<f64>, DVector<f64>) {
    let n = params.n_players;
    if n == 2 {
        return (DMatrix::identity(2, 2), DVector::from_element(2, -1.0));
    }
    let mut rng = setup_rng(params.seed);
    let m = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let q_mat = DMatrix::identity(n, n) + m.transpose() * &m / n as f64;
    let q = DVector::from_fn(n, |_, _| -1.0 - rng.random::<f64>());
    (q_mat, q)
}

/// Solves `Qx + q + λ1 = 0`, `0 ≤ λ ⊥ cap − 1ᵀx ≥ 0`.
pub fn solve_kkt(q_mat: &DMatrix<f64>, q: &DVector<f64>, cap: f64) -> Result<KktSolution> {
    let n = q.len();
    let lu = q_mat.clone().lu();
    let x_free = lu.solve(&(-q)).ok_or_else(|| Error::InvalidGame("Q is singular".into()))?;
    if x_free.sum() <= cap {
        return Ok(KktSolution { x: x_free, lambda: 0.0 });
    }
    let mut k = DMatrix::zeros(n + 1, n + 1);
    k.view_mut((0, 0), (n, n)).copy_from(q_mat);
    for i in 0..n {
        k[(i, n)] = 1.0;
        k[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs[n] = cap;
    let sol = k.lu().solve(&rhs).ok_or_else(|| Error::InvalidGame("singular KKT system".into()))?;
    Ok(KktSolution { x: sol.rows(0, n).into_owned(), lambda: sol[n] })
}

pub fn build_quadratic_kkt(params: &QuadraticParams) -> Result<(GameProblem, KktSolution)> {
    let n = params.n_players;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("quadratic game needs at least 2 players, got {n}")));
    }
    if !(params.noise_std >= 0.0 && params.noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_std = {} must be nonnegative", params.noise_std)));
    }
    let (q_mat, q) = quadratic_data(params);
    let solution = solve_kkt(&q_mat, &q, params.cap)?;
    let beta = 1.0 / -min_eigenvalue(&(-&q_mat));

    let exact = {
        let (q_mat, q) = (q_mat.clone(), q.clone());
        move |i: usize, x: &[f64], out: &mut [f64]| {
            out[0] = q[i] + (0..x.len()).map(|j| q_mat[(i, j)] * x[j]).sum::<f64>();
        }
    };
    let std = params.noise_std;
    let sampled = {
        let (q_mat, q) = (q_mat.clone(), q.clone());
        move |i: usize, x: &[f64], xi: &[f64], out: &mut [f64]| {
            out[0] = q[i] + (0..x.len()).map(|j| q_mat[(i, j)] * x[j]).sum::<f64>() + xi[0];
        }
    };
    let noise = Normal::new(0.0, std).expect("finite nonnegative std");
    let oracle = ClosureOracle::new(vec![1; n], move |_, rng: &mut StreamRng, xi: &mut [f64]| xi[0] = noise.sample(rng), sampled)
        .with_exact(exact);
    let blocks = vec![DMatrix::from_element(1, 1, 1.0); n];
    let coupling = AffineCoupling::with_even_split(blocks, &DVector::from_element(1, params.cap))?;
    let game = GameProblem::new(
        "quadratic-kkt",
        vec![1; n],
        vec![LocalTerm::Free(1); n],
        Coupling::Affine(coupling),
        MultiplierGraph::cycle(n)?,
        Arc::new(oracle),
    )?
    .with_properties(GameProperties { monotone: true, cocoercive: Some(beta) });
    Ok((game, solution))
}

#[cfg(test)]
mod tests {
    use nalgebra::dvector;

    use super::*;
    use crate::oracle::exact_pseudogradient;
    use crate::splitting::residual;

    #[test]
    fn two_player_active_budget() {
        let (_, s) = build_quadratic_kkt(&QuadraticParams::default()).unwrap();
        assert!((s.x - dvector![0.5, 0.5]).norm() < 1e-14);
        assert!((s.lambda - 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_player_slack_budget() {
        let (_, s) = build_quadratic_kkt(&QuadraticParams { cap: 10.0, ..Default::default() }).unwrap();
        assert_eq!(s.x, dvector![1.0, 1.0]);
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn reference_satisfies_kkt() {
        for n in [2, 3, 5, 8] {
            let p = QuadraticParams { n_players: n, seed: n as u64, ..Default::default() };
            let (g, s) = build_quadratic_kkt(&p).unwrap();
            let f = exact_pseudogradient(&g, s.x.as_slice()).unwrap();
            let stationarity = f.add_scalar(s.lambda);
            assert!(residual(&g, &s.x, &stationarity) <= 1e-12);
            assert!(s.lambda >= 0.0);
            assert!(s.x.sum() <= p.cap + 1e-12);
            assert!((s.lambda * (s.x.sum() - p.cap)).abs() <= 1e-12);
        }
    }
}
