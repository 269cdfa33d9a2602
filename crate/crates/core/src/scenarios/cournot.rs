//! Network Cournot game: companies supply markets with bounded capacity under an
//! uncertain inverse demand `p_j = Λ_j^{1/γ} t_j^{−1/γ}`, `t_j` the aggregate supply.
//!
//! Company `i` serves the markets listed in its participation row; its decision holds one
//! supply per served market. The revenue of company `i` is `Σ_j p_j [x_i]_j` over its
//! markets, and the local cost is
//! `q_iᵀx_i + β_i/(β_i+1) π_i^{1/β_i} Σ_j [x_i]_j^{(β_i+1)/β_i}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AffineCoupling, Coupling, GameProblem, GameProperties, LocalTerm, MultiplierGraph, PseudogradientOracle};
use crate::rng::{setup_rng, StreamRng};

/// Default instance shipped with the crate (20 companies, 7 markets).
pub const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/cournot_default.json");

/// Smallest supply; keeps prices finite.
pub const X_MIN: f64 = 1e-6;
/// Aggregate supplies below this are clamped inside the price.
pub const TOTAL_MIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceSource {
    /// The frozen default instance.
    #[default]
    Fixture,
    /// Drawn from `seed` with the parameter ranges.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CournotParams {
    pub instance: InstanceSource,
    pub n_companies: usize,
    pub n_markets: usize,
    pub theta_range: [f64; 2],
    pub capacity_range: [f64; 2],
    pub pi_range: [f64; 2],
    pub q_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub gamma_d: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    /// Weight of every edge of the multiplier graph.
    pub graph_weight: f64,
    /// Initial supply as a fraction of the way from `X_MIN` to `θ`.
    pub start_fraction: f64,
    pub seed: u64,
}

impl Default for CournotParams {
    fn default() -> Self {
        Self {
            instance: InstanceSource::Fixture,
            n_companies: 20,
            n_markets: 7,
            theta_range: [1.0, 1.5],
            capacity_range: [0.5, 1.0],
            pi_range: [0.5, 5.0],
            q_range: [1.0, 100.0],
            beta_range: [0.5, 1.5],
            gamma_d: 1.1,
            lambda_mean: 5000.0,
            lambda_std: 500.0,
            graph_weight: 1.0,
            start_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Drawn data of one instance. Per-company vectors follow the order of `markets[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CournotInstance {
    pub n_markets: usize,
    /// Markets served by each company, ascending.
    pub markets: Vec<Vec<usize>>,
    pub theta: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub beta: Vec<f64>,
    /// Market capacities `b_j`.
    pub capacity: Vec<f64>,
}

impl CournotInstance {
    pub fn n_companies(&self) -> usize {
        self.markets.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_companies();
        let bad = |msg: String| Err(Error::InvalidGame(msg));
        if [self.theta.len(), self.q.len(), self.pi.len(), self.beta.len()].iter().any(|&l| l != n) {
            return bad("per-company data lengths differ".into());
        }
        if self.capacity.len() != self.n_markets {
            return bad("capacity length differs from the number of markets".into());
        }
        let mut served = vec![0usize; self.n_markets];
        for i in 0..n {
            let mk = &self.markets[i];
            if mk.is_empty() {
                return bad(format!("company {i} serves no market"));
            }
            if self.theta[i].len() != mk.len() || self.q[i].len() != mk.len() {
                return bad(format!("company {i}: theta/q do not match its markets"));
            }
            if mk.windows(2).any(|w| w[0] >= w[1]) || mk.iter().any(|&j| j >= self.n_markets) {
                return bad(format!("company {i}: markets must be distinct, ascending and in range"));
            }
            if self.theta[i].iter().any(|&t| !(t > X_MIN)) {
                return bad(format!("company {i}: theta must exceed the minimum supply"));
            }
            if !(self.pi[i] > 0.0 && self.beta[i] > 0.0) {
                return bad(format!("company {i}: pi and beta must be positive"));
            }
            for &j in mk {
                served[j] += 1;
            }
        }
        if let Some(j) = served.iter().position(|&c| c == 0) {
            return bad(format!("market {j} has no company"));
        }
        if self.capacity.iter().any(|&b| !(b > 0.0)) {
            return bad("capacities must be positive".into());
        }
        Ok(())
    }

    /// `A_i`: one column per served market with a unit entry in that market's row.
    pub fn incidence(&self, i: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_markets, self.markets[i].len());
        for (c, &j) in self.markets[i].iter().enumerate() {
            a[(j, c)] = 1.0;
        }
        a
    }
}

pub fn load_fixture() -> Result<CournotInstance> {
    let inst: CournotInstance = serde_json::from_str(DEFAULT_FIXTURE)?;
    inst.check()?;
    Ok(inst)
}

fn uniform(rng: &mut StreamRng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    let ok = r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && (!positive || r[0] > 0.0);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} range {r:?} is invalid")))
    }
}

fn check_params(p: &CournotParams) -> Result<()> {
    check_range("theta", p.theta_range, true)?;
    check_range("capacity", p.capacity_range, true)?;
    check_range("pi", p.pi_range, true)?;
    check_range("q", p.q_range, false)?;
    check_range("beta", p.beta_range, true)?;
    if p.theta_range[0] <= X_MIN {
        return Err(Error::InvalidParameter("theta must exceed the minimum supply".into()));
    }
    if !(p.gamma_d > 1.0) {
        return Err(Error::InvalidParameter(format!("demand exponent {} must exceed 1", p.gamma_d)));
    }
    if !(p.lambda_mean.is_finite() && p.lambda_std >= 0.0 && p.lambda_std.is_finite()) {
        return Err(Error::InvalidParameter("demand mean must be finite and std nonnegative".into()));
    }
    if !(p.graph_weight > 0.0 && p.graph_weight.is_finite()) {
        return Err(Error::InvalidParameter("graph weight must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p.start_fraction) {
        return Err(Error::InvalidParameter("start_fraction must lie in [0, 1]".into()));
    }
    if p.n_companies < 2 || p.n_markets < 1 || 3 * p.n_companies < 2 * p.n_markets {
        return Err(Error::InvalidParameter(format!(
            "{} companies cannot cover {} markets with at least two companies each",
            p.n_companies, p.n_markets
        )));
    }
    Ok(())
}

/// Random participation: every company serves 1–3 markets and every market has at
/// least two companies.
pub fn random_participation(n_companies: usize, n_markets: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..n_markets).collect();
    let mut markets: Vec<Vec<usize>> = (0..n_companies)
        .map(|_| {
            let k = rng.random_range(1..=3usize).min(n_markets);
            let mut pick: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
            pick.sort_unstable();
            pick
        })
        .collect();
    loop {
        let mut served = vec![0usize; n_markets];
        markets.iter().flatten().for_each(|&j| served[j] += 1);
        let Some(j) = served.iter().position(|&c| c < 2) else { break };
        let mut open: Vec<usize> = (0..n_companies).filter(|&i| markets[i].len() < 3 && !markets[i].contains(&j)).collect();
        if open.is_empty() {
            // Move a slot from a market with spare companies.
            open = (0..n_companies)
                .filter(|&i| !markets[i].contains(&j) && markets[i].iter().any(|&o| served[o] > 2))
                .collect();
            let i = *open.choose(rng).expect("enough companies to cover every market twice");
            let pos = markets[i].iter().position(|&o| served[o] > 2).unwrap();
            markets[i].remove(pos);
        }
        let i = *open.choose(rng).unwrap();
        markets[i].push(j);
        markets[i].sort_unstable();
    }
    markets
}

pub fn random_instance(p: &CournotParams) -> Result<CournotInstance> {
    check_params(p)?;
    let mut rng = setup_rng(p.seed);
    let markets = random_participation(p.n_companies, p.n_markets, &mut rng);
    let mut theta = Vec::new();
    let mut q = Vec::new();
    let mut pi = Vec::new();
    let mut beta = Vec::new();
    for mk in &markets {
        theta.push(mk.iter().map(|_| uniform(&mut rng, p.theta_range)).collect());
        q.push(mk.iter().map(|_| uniform(&mut rng, p.q_range)).collect());
        pi.push(uniform(&mut rng, p.pi_range));
        beta.push(uniform(&mut rng, p.beta_range));
    }
    let capacity = (0..p.n_markets).map(|_| uniform(&mut rng, p.capacity_range)).collect();
    let inst = CournotInstance { n_markets: p.n_markets, markets, theta, q, pi, beta, capacity };
    inst.check()?;
    Ok(inst)
}

/// `E[max(Λ, 0)^{1/γ}]` for `Λ ~ N(μ, s²)` by composite Simpson over `μ ± 12 s`.
pub fn expected_root(mean: f64, std: f64, gamma_d: f64) -> f64 {
    let e = 1.0 / gamma_d;
    if std == 0.0 {
        return mean.max(0.0).powf(e);
    }
    let lo = (mean - 12.0 * std).max(0.0);
    let hi = mean + 12.0 * std;
    if hi <= 0.0 {
        return 0.0;
    }
    let intervals = 4000;
    let h = (hi - lo) / intervals as f64;
    let density = |l: f64| (-0.5 * ((l - mean) / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
    let f = |l: f64| l.powf(e) * density(l);
    let mut sum = f(lo) + f(hi);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + k as f64 * h);
    }
    sum * h / 3.0
}

/// Pseudogradient oracle of the Cournot game. One noise draw of company `i` holds
/// `max(Λ_j, 0)^{1/γ}` for each market it serves, in the order of its market list.
pub struct CournotOracle {
    inst: CournotInstance,
    offsets: Vec<usize>,
    /// Global coordinates supplying each market.
    members: Vec<Vec<usize>>,
    pi_root: Vec<f64>,
    gamma_d: f64,
    demand: Normal<f64>,
    mean_root: f64,
}

impl CournotOracle {
    pub fn new(inst: CournotInstance, params: &CournotParams) -> Self {
        let mut offsets = vec![0];
        for mk in &inst.markets {
            offsets.push(offsets.last().unwrap() + mk.len());
        }
        let mut members = vec![Vec::new(); inst.n_markets];
        for (i, mk) in inst.markets.iter().enumerate() {
            for (c, &j) in mk.iter().enumerate() {
                members[j].push(offsets[i] + c);
            }
        }
        let pi_root = (0..inst.n_companies()).map(|i| inst.pi[i].powf(1.0 / inst.beta[i])).collect();
        Self {
            offsets,
            members,
            pi_root,
            gamma_d: params.gamma_d,
            demand: Normal::new(params.lambda_mean, params.lambda_std).expect("validated demand"),
            mean_root: expected_root(params.lambda_mean, params.lambda_std, params.gamma_d),
            inst,
        }
    }

    pub fn instance(&self) -> &CournotInstance {
        &self.inst
    }

    /// `E[max(Λ, 0)^{1/γ}]`.
    pub fn mean_root(&self) -> f64 {
        self.mean_root
    }

    pub fn total(&self, j: usize, x: &[f64]) -> f64 {
        self.members[j].iter().map(|&g| x[g]).sum()
    }

    /// Local production cost `c_i(x_i)`.
    pub fn production_cost(&self, i: usize, x_i: &[f64]) -> f64 {
        let b = self.inst.beta[i];
        let lin: f64 = self.inst.q[i].iter().zip(x_i).map(|(q, x)| q * x).sum();
        let pw: f64 = x_i.iter().map(|x| x.powf((b + 1.0) / b)).sum();
        lin + b / (b + 1.0) * self.pi_root[i] * pw
    }

    /// `∇c_i(x_i)`.
    pub fn production_gradient(&self, i: usize, x_i: &[f64], out: &mut [f64]) {
        let b = self.inst.beta[i];
        for c in 0..x_i.len() {
            out[c] = self.inst.q[i][c] + self.pi_root[i] * x_i[c].powf(1.0 / b);
        }
    }

    /// `J_i(x, ξ) = c_i(x_i) − Σ_j p_j [x_i]_j` for a noise draw `roots` of company `i`.
    pub fn cost(&self, i: usize, x: &[f64], roots: &[f64]) -> f64 {
        let xi = &x[self.offsets[i]..self.offsets[i + 1]];
        let revenue: f64 = self.inst.markets[i]
            .iter()
            .enumerate()
            .map(|(c, &j)| roots[c] * self.total(j, x).max(TOTAL_MIN).powf(-1.0 / self.gamma_d) * xi[c])
            .sum();
        self.production_cost(i, xi) - revenue
    }

    /// Gradient with every market's demand root replaced by `root(c)`.
    fn gradient_with(&self, i: usize, x: &[f64], root: impl Fn(usize) -> f64, out: &mut [f64]) {
        let xi = &x[self.offsets[i]..self.offsets[i + 1]];
        self.production_gradient(i, xi, out);
        let e = 1.0 / self.gamma_d;
        for (c, &j) in self.inst.markets[i].iter().enumerate() {
            let t = self.total(j, x).max(TOTAL_MIN);
            let base = t.powf(-e);
            out[c] -= root(c) * (base - e * xi[c] * base / t);
        }
    }
}

impl PseudogradientOracle for CournotOracle {
    fn noise_dim(&self, player: usize) -> usize {
        self.inst.markets[player].len()
    }

    fn sample_noise(&self, _player: usize, rng: &mut StreamRng, xi: &mut [f64]) {
        let e = 1.0 / self.gamma_d;
        for v in xi.iter_mut() {
            *v = self.demand.sample(rng).max(0.0).powf(e);
        }
    }

    fn sampled_gradient(&self, player: usize, x: &[f64], xi: &[f64], out: &mut [f64]) {
        self.gradient_with(player, x, |c| xi[c], out);
    }

    /// The gradient is affine in the demand roots, so the batch mean only averages them.
    fn batch_mean_gradient(&self, player: usize, x: &[f64], batch: u64, rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.noise_dim(player);
        let mut xi = vec![0.0; d];
        let mut sum = vec![0.0; d];
        for _ in 0..batch {
            self.sample_noise(player, rng, &mut xi);
            for c in 0..d {
                sum[c] += xi[c];
            }
        }
        let s = batch as f64;
        self.gradient_with(player, x, |c| sum[c] / s, out);
    }

    fn has_exact(&self) -> bool {
        true
    }

    fn exact_gradient(&self, player: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.gradient_with(player, x, |_| self.mean_root, out);
        Ok(())
    }
}

/// Cycle over the companies plus the chords (2,15) and (6,13) (1-based) when present.
pub fn cournot_graph(n: usize, weight: f64) -> Result<MultiplierGraph> {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    if n == 2 {
        edges.truncate(1);
    }
    for (a, b) in [(1, 14), (5, 12)] {
        if b < n {
            edges.push((a, b));
        }
    }
    MultiplierGraph::from_edges(n, &edges, weight)
}

pub struct CournotGame {
    pub game: GameProblem,
    pub oracle: Arc<CournotOracle>,
}

pub fn build_cournot(params: &CournotParams) -> Result<CournotGame> {
    check_params(params)?;
    let inst = match params.instance {
        InstanceSource::Fixture => {
            let inst = load_fixture()?;
            if inst.n_companies() != params.n_companies || inst.n_markets != params.n_markets {
                return Err(Error::InvalidParameter(format!(
                    "the fixture has {} companies and {} markets; use \"instance\": \"random\" for other sizes",
                    inst.n_companies(),
                    inst.n_markets
                )));
            }
            inst
        }
        InstanceSource::Random => random_instance(params)?,
    };
    let n = inst.n_companies();
    let dims: Vec<usize> = inst.markets.iter().map(Vec::len).collect();
    let local = (0..n)
        .map(|i| LocalTerm::Box { lower: vec![X_MIN; dims[i]], upper: inst.theta[i].clone() })
        .collect();
    let blocks = (0..n).map(|i| inst.incidence(i)).collect();
    let coupling = AffineCoupling::with_even_split(blocks, &DVector::from_vec(inst.capacity.clone()))?;
    let start = DVector::from_iterator(
        dims.iter().sum(),
        inst.theta.iter().flatten().map(|t| X_MIN + params.start_fraction * (t - X_MIN)),
    );
    let oracle = Arc::new(CournotOracle::new(inst, params));
    let game = GameProblem::new(
        "cournot",
        dims,
        local,
        Coupling::Affine(coupling),
        cournot_graph(n, params.graph_weight)?,
        oracle.clone(),
    )?
    .with_start(start)?
    .with_properties(GameProperties { monotone: true, cocoercive: None });
    Ok(CournotGame { game, oracle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::validate_game;

    #[test]
    fn graph_degrees() {
        let g = cournot_graph(20, 1.0).unwrap();
        for i in 0..20 {
            let expected = if [1, 14, 5, 12].contains(&i) { 3.0 } else { 2.0 };
            assert_eq!(g.degree(i), expected, "node {i}");
        }
        assert!(g.check().is_ok());
    }

    #[test]
    fn random_instances_respect_ranges() {
        for seed in 0..20 {
            let p = CournotParams { instance: InstanceSource::Random, seed, ..Default::default() };
            let inst = random_instance(&p).unwrap();
            assert!(inst.capacity.iter().all(|b| (0.5..=1.0).contains(b)));
            assert!(inst.theta.iter().flatten().all(|t| (1.0..=1.5).contains(t)));
            assert!(inst.markets.iter().all(|m| (1..=3).contains(&m.len())));
            let mut served = vec![0; 7];
            inst.markets.iter().flatten().for_each(|&j| served[j] += 1);
            assert!(served.iter().all(|&c| c >= 2), "{served:?}");
        }
    }

    #[test]
    fn fixture_builds_and_validates() {
        let c = build_cournot(&CournotParams::default()).unwrap();
        assert_eq!(c.game.n_players(), 20);
        assert_eq!(c.game.m(), 7);
        let r = validate_game(&c.game);
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn expected_root_matches_monte_carlo_scale() {
        let exact = expected_root(5000.0, 500.0, 1.1);
        let naive = 5000f64.powf(1.0 / 1.1);
        // Jensen: the mean of a concave power lies slightly below the power of the mean.
        assert!(exact < naive && exact > 0.99 * naive);
        assert_eq!(expected_root(4.0, 0.0, 2.0), 2.0);
    }

    /// Writes the frozen default instance. Run with `--ignored` only to regenerate.
    #[test]
    #[ignore]
    fn regenerate_fixture() {
        let p = CournotParams { instance: InstanceSource::Random, seed: 2021, ..Default::default() };
        let inst = random_instance(&p).unwrap();
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/cournot_default.json");
        std::fs::write(path, serde_json::to_string_pretty(&inst).unwrap() + "\n").unwrap();
    }
}
