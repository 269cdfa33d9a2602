//! Game data model: players, local terms, coupling constraints, the multiplier
//! graph and the stochastic pseudogradient oracle.

mod coupling;
mod graph;
mod validate;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;

pub use coupling::{AffineCoupling, Coupling, SeparableConstraint};
pub use graph::{extended_laplacian, laplacian, MultiplierGraph};
pub use validate::{validate_game, validate_game_with, CheckOutcome, ValidationCheck, ValidationOptions, ValidationReport};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Stochastic first-order information of a game.
///
/// Every player's oracle receives the full decision vector `x` and may ignore the
/// blocks it does not depend on. Implementations must be safe to call concurrently.
pub trait PseudogradientOracle: Send + Sync {
    /// Length of one noise draw `ξ` for `player`.
    fn noise_dim(&self, player: usize) -> usize;

    /// Draws one realization of `ξ` for `player` from `rng`.
    fn sample_noise(&self, player: usize, rng: &mut StreamRng, xi: &mut [f64]);

    /// `∇_{x_i} J_i(x, ξ)` written into `out` (length `n_i`).
    fn sampled_gradient(&self, player: usize, x: &[f64], xi: &[f64], out: &mut [f64]);

    /// Mean of `batch` sampled gradients drawn from `rng`.
    ///
    /// Oracles whose gradient is cheap to aggregate may override this, provided the
    /// result matches the default loop up to summation order.
    fn batch_mean_gradient(&self, player: usize, x: &[f64], batch: u64, rng: &mut StreamRng, out: &mut [f64]) {
        let mut xi = vec![0.0; self.noise_dim(player)];
        let mut g = vec![0.0; out.len()];
        out.fill(0.0);
        for _ in 0..batch {
            self.sample_noise(player, rng, &mut xi);
            self.sampled_gradient(player, x, &xi, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += v;
            }
        }
        let s = batch as f64;
        out.iter_mut().for_each(|o| *o /= s);
    }

    fn has_exact(&self) -> bool {
        false
    }

    /// Exact expected gradient block `E[∇_{x_i} J_i(x, ξ)]`, when known in closed form.
    fn exact_gradient(&self, _player: usize, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingExactOracle)
    }
}

/// Proximal map of a player's nonsmooth local term.
pub trait ProxOperator: Send + Sync {
    /// Writes `prox_{step f}(v)` into `out`.
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]);
}

/// Nonsmooth local term `f_i` of a player.
#[derive(Clone)]
pub enum LocalTerm {
    /// `f_i = 0`, `Ω_i = R^{n_i}`.
    Free(usize),
    /// Indicator of the box `[lower, upper]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Arbitrary convex term given through its proximal map.
    Prox { dim: usize, op: Arc<dyn ProxOperator> },
}

impl std::fmt::Debug for LocalTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LocalTerm::Free(d) => write!(f, "Free({d})"),
            LocalTerm::Box { lower, upper } => f.debug_struct("Box").field("lower", lower).field("upper", upper).finish(),
            LocalTerm::Prox { dim, .. } => write!(f, "Prox({dim})"),
        }
    }
}

impl LocalTerm {
    pub fn dim(&self) -> usize {
        match self {
            LocalTerm::Free(d) => *d,
            LocalTerm::Box { lower, .. } => lower.len(),
            LocalTerm::Prox { dim, .. } => *dim,
        }
    }

    pub fn is_indicator(&self) -> bool {
        !matches!(self, LocalTerm::Prox { .. })
    }

    pub fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        match self {
            LocalTerm::Prox { op, .. } => op.prox(v, step, out),
            _ => self.project_unchecked(v, out),
        }
    }

    /// Euclidean projection onto `Ω_i`; only defined for indicator terms.
    pub fn project(&self, player: usize, v: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.is_indicator() {
            return Err(Error::NotAnIndicator(player));
        }
        self.project_unchecked(v, out);
        Ok(())
    }

    fn project_unchecked(&self, v: &[f64], out: &mut [f64]) {
        match self {
            LocalTerm::Box { lower, upper } => {
                for c in 0..v.len() {
                    out[c] = v[c].clamp(lower[c], upper[c]);
                }
            }
            _ => out.copy_from_slice(v),
        }
    }
}

/// Structural properties the caller asserts about the expected pseudogradient.
/// They select which property checks apply; nothing here is verified at construction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GameProperties {
    pub monotone: bool,
    /// Cocoercivity constant `β`, if `F` is cocoercive.
    pub cocoercive: Option<f64>,
}

/// Immutable description of an `N`-player stochastic game.
#[derive(Clone)]
pub struct GameProblem {
    name: String,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    local: Vec<LocalTerm>,
    coupling: Coupling,
    graph: MultiplierGraph,
    oracle: Arc<dyn PseudogradientOracle>,
    start: DVector<f64>,
    properties: GameProperties,
}

impl std::fmt::Debug for GameProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameProblem")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("m", &self.m())
            .field("coupling", &self.coupling)
            .finish_non_exhaustive()
    }
}

impl GameProblem {
    pub fn new(
        name: impl Into<String>,
        dims: Vec<usize>,
        local: Vec<LocalTerm>,
        coupling: Coupling,
        graph: MultiplierGraph,
        oracle: Arc<dyn PseudogradientOracle>,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidGame("a game needs at least one player".into()));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidGame(format!("player {i} has an empty decision vector")));
        }
        if local.len() != dims.len() {
            return Err(Error::Dimension(format!("{} local terms for {} players", local.len(), dims.len())));
        }
        if let Some(i) = (0..dims.len()).find(|&i| local[i].dim() != dims[i]) {
            return Err(Error::Dimension(format!(
                "local term of player {i} has dimension {}, expected {}",
                local[i].dim(),
                dims[i]
            )));
        }
        if graph.n_nodes() != dims.len() {
            return Err(Error::Dimension(format!(
                "multiplier graph has {} nodes for {} players",
                graph.n_nodes(),
                dims.len()
            )));
        }
        if let Coupling::Affine(a) = &coupling {
            let ok = (0..dims.len()).all(|i| a.block(i).ncols() == dims[i]);
            if !ok {
                return Err(Error::Dimension("A_i must have n_i columns".into()));
            }
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for d in &dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let n = *offsets.last().unwrap();
        let mut start = DVector::zeros(n);
        for (i, term) in local.iter().enumerate() {
            let zero = vec![0.0; dims[i]];
            term.prox(&zero, 1.0, &mut start.as_mut_slice()[offsets[i]..offsets[i + 1]]);
        }
        Ok(Self {
            name: name.into(),
            dims,
            offsets,
            local,
            coupling,
            graph,
            oracle,
            start,
            properties: GameProperties::default(),
        })
    }

    /// Replaces the default starting point (the prox of zero).
    pub fn with_start(mut self, start: DVector<f64>) -> Result<Self> {
        if start.len() != self.n() {
            return Err(Error::Dimension(format!("start has length {}, expected {}", start.len(), self.n())));
        }
        self.start = start;
        Ok(self)
    }

    pub fn with_properties(mut self, properties: GameProperties) -> Self {
        self.properties = properties;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_players(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total primal dimension `n = sum_i n_i`.
    pub fn n(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Coupling-constraint dimension.
    pub fn m(&self) -> usize {
        self.coupling.m()
    }

    pub fn block(&self, player: usize) -> Range<usize> {
        self.offsets[player]..self.offsets[player + 1]
    }

    /// Range of player `i`'s block in a stacked dual vector of length `N m`.
    pub fn dual_block(&self, player: usize) -> Range<usize> {
        player * self.m()..(player + 1) * self.m()
    }

    pub fn local(&self, player: usize) -> &LocalTerm {
        &self.local[player]
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn graph(&self) -> &MultiplierGraph {
        &self.graph
    }

    pub fn oracle(&self) -> &dyn PseudogradientOracle {
        self.oracle.as_ref()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn properties(&self) -> GameProperties {
        self.properties
    }

    pub fn has_exact_pseudogradient(&self) -> bool {
        self.oracle.has_exact()
    }

    /// Whether every local term is an indicator, so projections are available.
    pub fn has_projectors(&self) -> bool {
        self.local.iter().all(LocalTerm::is_indicator)
    }

    /// Assembled coupling value `g(x) = sum_i g_i(x_i)`.
    pub fn coupling_value(&self, x: &[f64]) -> DVector<f64> {
        let m = self.m();
        let mut total = DVector::zeros(m);
        let mut gi = vec![0.0; m];
        for i in 0..self.n_players() {
            self.coupling.value_into(i, &x[self.block(i)], &mut gi);
            for r in 0..m {
                total[r] += gi[r];
            }
        }
        total
    }

    /// Projection of `x` onto `Ω` (or the unit-step prox for non-indicator terms).
    pub fn project_local(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for i in 0..self.n_players() {
            let r = self.block(i);
            self.local[i].prox(&x[r.clone()], 1.0, &mut out.as_mut_slice()[r]);
        }
        out
    }
}

type NoiseFn = dyn Fn(usize, &mut StreamRng, &mut [f64]) + Send + Sync;
type GradFn = dyn Fn(usize, &[f64], &[f64], &mut [f64]) + Send + Sync;
type ExactFn = dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync;

/// Pseudogradient oracle assembled from closures; convenient for synthetic games.
pub struct ClosureOracle {
    noise_dims: Vec<usize>,
    noise: Box<NoiseFn>,
    grad: Box<GradFn>,
    exact: Option<Box<ExactFn>>,
}

impl ClosureOracle {
    pub fn new(
        noise_dims: Vec<usize>,
        noise: impl Fn(usize, &mut StreamRng, &mut [f64]) + Send + Sync + 'static,
        grad: impl Fn(usize, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { noise_dims, noise: Box::new(noise), grad: Box::new(grad), exact: None }
    }

    /// Deterministic oracle: `ξ` is empty and the sampled gradient equals `grad`.
    pub fn deterministic(
        n_players: usize,
        grad: impl Fn(usize, &[f64], &mut [f64]) + Send + Sync + Clone + 'static,
    ) -> Self {
        let g2 = grad.clone();
        Self::new(vec![0; n_players], |_, _, _| {}, move |i, x, _, out| grad(i, x, out)).with_exact(g2)
    }

    pub fn with_exact(mut self, exact: impl Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.exact = Some(Box::new(exact));
        self
    }
}

impl PseudogradientOracle for ClosureOracle {
    fn noise_dim(&self, player: usize) -> usize {
        self.noise_dims[player]
    }

    fn sample_noise(&self, player: usize, rng: &mut StreamRng, xi: &mut [f64]) {
        (self.noise)(player, rng, xi)
    }

    fn sampled_gradient(&self, player: usize, x: &[f64], xi: &[f64], out: &mut [f64]) {
        (self.grad)(player, x, xi, out)
    }

    fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    fn exact_gradient(&self, player: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.exact {
            Some(f) => {
                f(player, x, out);
                Ok(())
            }
            None => Err(Error::MissingExactOracle),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(n: usize) -> Arc<dyn PseudogradientOracle> {
        Arc::new(ClosureOracle::deterministic(n, |i, x, out: &mut [f64]| out[0] = x[i]))
    }

    #[test]
    fn empty_decision_is_rejected() {
        let g = GameProblem::new(
            "bad",
            vec![1, 0],
            vec![LocalTerm::Free(1), LocalTerm::Free(0)],
            Coupling::None,
            MultiplierGraph::cycle(2).unwrap(),
            oracle(2),
        );
        assert!(matches!(g, Err(Error::InvalidGame(_))));
    }

    #[test]
    fn blocks_partition_the_decision_vector() {
        let g = GameProblem::new(
            "blocks",
            vec![2, 1, 3],
            vec![LocalTerm::Free(2), LocalTerm::Free(1), LocalTerm::Free(3)],
            Coupling::None,
            MultiplierGraph::cycle(3).unwrap(),
            oracle(3),
        )
        .unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.block(0), 0..2);
        assert_eq!(g.block(1), 2..3);
        assert_eq!(g.block(2), 3..6);
        assert_eq!(g.m(), 0);
    }

    #[test]
    fn box_projection_clamps() {
        let t = LocalTerm::Box { lower: vec![0.0], upper: vec![1.0] };
        let mut out = [0.0];
        t.project(0, &[1.7], &mut out).unwrap();
        assert_eq!(out, [1.0]);
        t.prox(&[-0.2], 3.0, &mut out);
        assert_eq!(out, [0.0]);
    }
}
