//! Stochastic approximations of the expected pseudogradient.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameProblem;
use crate::rng::{Site, StreamKey};

/// Increasing batch rule `S_k = ceil(c (k + k0)^(a+1))`, optionally capped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSchedule {
    pub c: f64,
    pub k0: f64,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
}

impl Default for BatchSchedule {
    fn default() -> Self {
        Self { c: 1.0, k0: 1.0, a: 0.2, cap: None }
    }
}

impl BatchSchedule {
    pub fn new(c: f64, k0: f64, a: f64) -> Result<Self> {
        let s = Self { c, k0, a, cap: None };
        s.check()?;
        Ok(s)
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.c) && ok(self.k0) && ok(self.a)) {
            return Err(Error::InvalidParameter(format!(
                "batch schedule needs c, k0, a > 0, got c={}, k0={}, a={}",
                self.c, self.k0, self.a
            )));
        }
        if self.cap == Some(0) {
            return Err(Error::InvalidParameter("batch cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self, k: usize) -> u64 {
        let v = self.c * (k as f64 + self.k0).powf(self.a + 1.0);
        // Values that are integers up to rounding in powf are not bumped to the next one.
        let nearest = v.round();
        let s = if (v - nearest).abs() <= 1e-9 * v.max(1.0) { nearest } else { v.ceil() };
        let s = if s >= u64::MAX as f64 { u64::MAX } else { (s as u64).max(1) };
        match self.cap {
            Some(cap) => s.min(cap),
            None => s,
        }
    }
}

/// Descriptive noise constants of the variance bound (used for test tolerances).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma0: f64,
    pub sigma_star: f64,
    pub p: f64,
}

/// How `F̂` is formed at each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OracleMode {
    /// One sample per agent and call.
    Sa,
    /// Sample mean over `S_k` samples per agent.
    Saa(BatchSchedule),
}

impl OracleMode {
    pub fn batch_size(&self, k: usize) -> u64 {
        match self {
            OracleMode::Sa => 1,
            OracleMode::Saa(s) => s.batch_size(k),
        }
    }
}

/// One evaluation of `F̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct Approximation {
    pub value: DVector<f64>,
    /// Batch size per agent.
    pub batch: u64,
    /// Individual sampled-gradient evaluations, `batch · N`.
    pub grad_samples: u64,
}

/// Below this many total samples agents are processed sequentially; the result is the
/// same either way since every agent owns its stream and output block.
const PARALLEL_THRESHOLD: u64 = 4096;

/// Per-agent sample mean of `batch` sampled gradients at `x`. Agent `i` draws from the
/// stream keyed by `(seed, i, k, call)`.
pub fn approx_pseudogradient_batch(game: &GameProblem, x: &[f64], k: usize, batch: u64, seed: u64, call: u32) -> Approximation {
    batch_mean_at(game, x, k, batch, seed, Site::Oracle(call))
}

/// Sample mean drawn from the streams of `site`; diagnostics use their own site so they
/// never consume the solver's samples.
pub fn batch_mean_at(game: &GameProblem, x: &[f64], k: usize, batch: u64, seed: u64, site: Site) -> Approximation {
    let n_players = game.n_players();
    let mut value = DVector::zeros(game.n());
    let oracle = game.oracle();
    let work = |(i, out): (usize, &mut [f64])| {
        let mut rng = StreamKey::new(seed, i, k, site).rng();
        oracle.batch_mean_gradient(i, x, batch, &mut rng, out);
    };
    let blocks = split_blocks(game, value.as_mut_slice());
    if batch.saturating_mul(n_players as u64) >= PARALLEL_THRESHOLD && rayon::current_num_threads() > 1 {
        blocks.into_par_iter().enumerate().for_each(work);
    } else {
        blocks.into_iter().enumerate().for_each(work);
    }
    Approximation { value, batch, grad_samples: batch * n_players as u64 }
}

pub fn approx_pseudogradient_saa(game: &GameProblem, x: &[f64], k: usize, schedule: &BatchSchedule, seed: u64, call: u32) -> Approximation {
    approx_pseudogradient_batch(game, x, k, schedule.batch_size(k), seed, call)
}

pub fn approx_pseudogradient_sa(game: &GameProblem, x: &[f64], k: usize, seed: u64, call: u32) -> Approximation {
    approx_pseudogradient_batch(game, x, k, 1, seed, call)
}

pub fn approx_pseudogradient(game: &GameProblem, x: &[f64], mode: &OracleMode, k: usize, seed: u64, call: u32) -> Approximation {
    approx_pseudogradient_batch(game, x, k, mode.batch_size(k), seed, call)
}

fn split_blocks<'a>(game: &GameProblem, mut v: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(game.n_players());
    for &d in game.dims() {
        let (head, tail) = v.split_at_mut(d);
        out.push(head);
        v = tail;
    }
    out
}

/// Exact pseudogradient `F(x)` stacked over players.
pub fn exact_pseudogradient(game: &GameProblem, x: &[f64]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(game.n());
    for i in 0..game.n_players() {
        let r = game.block(i);
        game.oracle().exact_gradient(i, x, &mut out.as_mut_slice()[r])?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    /// Empirical `E‖F̂ − F‖²` at batch `S`.
    pub mse: f64,
    /// Same at batch `4S`.
    pub mse_4s: f64,
    /// `mse / mse_4s`; about 4 under the `1/S` law.
    pub ratio: f64,
    /// `C (σ*² + σ0² ‖x − x*‖²) / S`.
    pub bound: f64,
}

/// Monte-Carlo estimate of the approximation error at `x` for batches `S` and `4S`.
pub fn empirical_error_stats(
    game: &GameProblem,
    x: &[f64],
    x_star: &[f64],
    batch: u64,
    trials: usize,
    seed: u64,
    constant: f64,
    noise: &NoiseModel,
) -> Result<ErrorStats> {
    if trials < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 trials, got {trials}")));
    }
    if batch == 0 {
        return Err(Error::InvalidParameter("batch must be positive".into()));
    }
    let exact = exact_pseudogradient(game, x)?;
    let mse_at = |s: u64, call: u32| {
        let total: f64 = (0..trials)
            .map(|t| (approx_pseudogradient_batch(game, x, t, s, seed, call).value - &exact).norm_squared())
            .sum();
        total / trials as f64
    };
    let mse = mse_at(batch, 0);
    let mse_4s = mse_at(4 * batch, 1);
    let dist_sq: f64 = x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let bound = constant * (noise.sigma_star.powi(2) + noise.sigma0.powi(2) * dist_sq) / batch as f64;
    let ratio = if mse_4s > 0.0 { mse / mse_4s } else if mse == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(ErrorStats { mse, mse_4s, ratio, bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_examples() {
        let s = BatchSchedule::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.batch_size(0), 1);
        assert_eq!(s.batch_size(2), 9);
        assert_eq!(BatchSchedule::new(0.5, 2.0, 0.5).unwrap().batch_size(10), 21);
        assert_eq!(s.with_cap(16).batch_size(10), 16);
    }

    #[test]
    fn batch_rejects_nonpositive() {
        assert!(BatchSchedule::new(0.0, 1.0, 1.0).is_err());
        assert!(BatchSchedule::new(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn exact_powers_are_not_rounded_up() {
        let s = BatchSchedule::new(1.0, 1.0, 1.0).unwrap();
        for k in 0..200 {
            let v = (k as u64 + 1).pow(2);
            assert_eq!(s.batch_size(k), v);
        }
    }

    #[test]
    fn oracle_mode_json() {
        let m: OracleMode = serde_json::from_str(r#"{"mode":"saa","c":1,"k0":1,"a":0.2}"#).unwrap();
        assert_eq!(m, OracleMode::Saa(BatchSchedule::default()));
        let m: OracleMode = serde_json::from_str(r#"{"mode":"sa"}"#).unwrap();
        assert_eq!(m, OracleMode::Sa);
    }
}
