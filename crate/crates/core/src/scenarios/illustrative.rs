//! Two-player bilinear game `F(x) = (R_1 x_2, −R_2 x_1)` with `R_i ~ N(1, σ²)`.

use std::sync::Arc;

use nalgebra::dvector;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ClosureOracle, Coupling, GameProblem, GameProperties, LocalTerm, MultiplierGraph};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IllustrativeParams {
    pub sigma_noise: f64,
    pub x0: [f64; 2],
}

impl Default for IllustrativeParams {
    fn default() -> Self {
        Self { sigma_noise: 0.1, x0: [1.0, 1.0] }
    }
}

pub fn build_illustrative(params: &IllustrativeParams) -> Result<GameProblem> {
    let sigma = params.sigma_noise;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_noise = {sigma} must be nonnegative")));
    }
    let normal = Normal::new(1.0, sigma).expect("finite nonnegative std");
    let oracle = ClosureOracle::new(
        vec![1, 1],
        move |_, rng: &mut StreamRng, xi: &mut [f64]| xi[0] = normal.sample(rng),
        |i, x, xi, out| out[0] = if i == 0 { xi[0] * x[1] } else { -xi[0] * x[0] },
    )
    .with_exact(|i, x, out| out[0] = if i == 0 { x[1] } else { -x[0] });
    GameProblem::new(
        "illustrative",
        vec![1, 1],
        vec![LocalTerm::Free(1), LocalTerm::Free(1)],
        Coupling::None,
        MultiplierGraph::cycle(2)?,
        Arc::new(oracle),
    )?
    .with_start(dvector![params.x0[0], params.x0[1]])
    .map(|g| g.with_properties(GameProperties { monotone: true, cocoercive: None }))
}
