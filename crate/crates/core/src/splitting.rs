//! Extended operators on `ω = (x, z, λ)`, step matrices and residuals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{laplacian, Coupling, GameProblem};
use crate::oracle::{batch_mean_at, exact_pseudogradient};
use crate::rng::Site;

/// Element of the extended space `R^n × R^{Nm} × R^{Nm}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Omega {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl Omega {
    pub fn zeros(game: &GameProblem) -> Self {
        let nm = game.n_players() * game.m();
        Self { x: DVector::zeros(game.n()), z: DVector::zeros(nm), lambda: DVector::zeros(nm) }
    }

    pub fn new(x: DVector<f64>, z: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, z, lambda }
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.z.len() + self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dot(&self, other: &Omega) -> f64 {
        self.x.dot(&other.x) + self.z.dot(&other.z) + self.lambda.dot(&other.lambda)
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `self + a · other`.
    pub fn add_scaled(&self, a: f64, other: &Omega) -> Omega {
        Omega { x: &self.x + a * &other.x, z: &self.z + a * &other.z, lambda: &self.lambda + a * &other.lambda }
    }

    pub fn sub(&self, other: &Omega) -> Omega {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&self, a: f64) -> Omega {
        Omega { x: a * &self.x, z: a * &self.z, lambda: a * &self.lambda }
    }

    /// `(1 − δ) · self + δ · other`.
    pub fn relax(&self, delta: f64, other: &Omega) -> Omega {
        let w = 1.0 - delta;
        Omega {
            x: w * &self.x + delta * &other.x,
            z: w * &self.z + delta * &other.z,
            lambda: w * &self.lambda + delta * &other.lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.z.iter()).chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.x.iter().chain(self.z.iter()).chain(self.lambda.iter()).copied())
    }

    pub fn from_vector(game: &GameProblem, v: &DVector<f64>) -> Self {
        let n = game.n();
        let nm = game.n_players() * game.m();
        Self {
            x: v.rows(0, n).into_owned(),
            z: v.rows(n, nm).into_owned(),
            lambda: v.rows(n + nm, nm).into_owned(),
        }
    }
}

/// Extended iterate `ω^k`, its relaxed average `ω̄^{k-1}` and the previous iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub omega: Omega,
    pub omega_bar: Omega,
    pub previous: Omega,
}

impl IterateState {
    /// `ω^0 = (x0, 0, 0)` with `ω̄^{-1} = ω^0`.
    pub fn new(game: &GameProblem, x0: DVector<f64>) -> Self {
        let mut omega = Omega::zeros(game);
        omega.x = x0;
        Self::from_omega(omega)
    }

    pub fn from_omega(omega: Omega) -> Self {
        Self { omega_bar: omega.clone(), previous: omega.clone(), omega }
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.omega.x
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.omega.lambda
    }
}

/// Per-agent step sizes `α_i`, `ν_i`, `σ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha: Vec<f64>,
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl StepSizes {
    pub fn uniform(n_players: usize, step: f64) -> Self {
        Self::uniform3(n_players, step, step, step)
    }

    pub fn uniform3(n_players: usize, alpha: f64, nu: f64, sigma: f64) -> Self {
        Self { alpha: vec![alpha; n_players], nu: vec![nu; n_players], sigma: vec![sigma; n_players] }
    }

    /// `‖Φ^{-1}‖`, the largest step.
    pub fn max_step(&self) -> f64 {
        self.alpha.iter().chain(&self.nu).chain(&self.sigma).fold(0.0, |a, &b| a.max(b))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|a| a * factor).collect();
        Self { alpha: s(&self.alpha), nu: s(&self.nu), sigma: s(&self.sigma) }
    }

    pub fn check(&self, n_players: usize) -> Result<()> {
        for (name, v) in [("alpha", &self.alpha), ("nu", &self.nu), ("sigma", &self.sigma)] {
            if v.len() != n_players {
                return Err(Error::Dimension(format!("{name} has {} entries for {n_players} players", v.len())));
            }
            if let Some((i, s)) = v.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
                return Err(Error::InvalidParameter(format!("{name}[{i}] = {s} must be positive")));
            }
        }
        Ok(())
    }

    /// `Φ^{-1} v`, blockwise per agent.
    pub fn apply_inverse_phi(&self, game: &GameProblem, v: &Omega) -> Omega {
        let mut out = v.clone();
        let m = game.m();
        for i in 0..game.n_players() {
            out.x.as_mut_slice()[game.block(i)].iter_mut().for_each(|a| *a *= self.alpha[i]);
            let d = i * m..(i + 1) * m;
            out.z.as_mut_slice()[d.clone()].iter_mut().for_each(|a| *a *= self.nu[i]);
            out.lambda.as_mut_slice()[d].iter_mut().for_each(|a| *a *= self.sigma[i]);
        }
        out
    }

    /// Diagonal of `Φ` expanded to the extended dimension.
    pub fn phi_diagonal(&self, game: &GameProblem) -> DVector<f64> {
        let ones = Omega { x: DVector::from_element(game.n(), 1.0), ..Omega::zeros(game) };
        let mut ones = ones;
        ones.z.fill(1.0);
        ones.lambda.fill(1.0);
        self.apply_inverse_phi(game, &ones).to_vector().map(|s| 1.0 / s)
    }
}

/// Step matrix `Φ` (and `Ψ` for the preconditioned splitting) with its smallest eigenvalue.
#[derive(Clone, Debug)]
pub struct StepMatrices {
    pub steps: StepSizes,
    pub phi_min_eig: f64,
    pub psi: Option<DMatrix<f64>>,
    pub psi_min_eig: Option<f64>,
}

pub fn build_phi(game: &GameProblem, steps: &StepSizes) -> Result<StepMatrices> {
    steps.check(game.n_players())?;
    let diag = steps.phi_diagonal(game);
    let phi_min_eig = diag.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(StepMatrices { steps: steps.clone(), phi_min_eig, psi: None, psi_min_eig: None })
}

/// `Ψ = [[α^{-1}, 0, −Aᵀ], [0, ν^{-1}, −L], [−A, −L, σ^{-1}]]` with `A = blkdiag(A_i)`
/// and `L` the extended Laplacian.
pub fn build_psi(game: &GameProblem, steps: &StepSizes) -> Result<StepMatrices> {
    let mut mats = build_phi(game, steps)?;
    let psi = psi_matrix(game, steps)?;
    mats.psi_min_eig = Some(min_eigenvalue(&psi));
    mats.psi = Some(psi);
    Ok(mats)
}

pub fn psi_matrix(game: &GameProblem, steps: &StepSizes) -> Result<DMatrix<f64>> {
    let affine = match game.coupling() {
        Coupling::Separable { .. } => return Err(Error::NonlinearCoupling("the preconditioning matrix")),
        c => c.as_affine(),
    };
    steps.check(game.n_players())?;
    let (n, m, np) = (game.n(), game.m(), game.n_players());
    let nm = np * m;
    let dim = n + 2 * nm;
    let mut psi = DMatrix::from_diagonal(&steps.phi_diagonal(game));
    if let Some(a) = affine {
        for i in 0..np {
            let ai = a.block(i);
            let cols = game.block(i);
            for r in 0..m {
                for (c, col) in cols.clone().enumerate() {
                    let v = ai[(r, c)];
                    psi[(n + nm + i * m + r, col)] = -v;
                    psi[(col, n + nm + i * m + r)] = -v;
                }
            }
        }
    }
    if m > 0 {
        let l = laplacian_unchecked(game);
        for i in 0..np {
            for j in 0..np {
                if l[(i, j)] == 0.0 {
                    continue;
                }
                for r in 0..m {
                    psi[(n + i * m + r, n + nm + j * m + r)] = -l[(i, j)];
                    psi[(n + nm + j * m + r, n + i * m + r)] = -l[(i, j)];
                }
            }
        }
    }
    debug_assert_eq!(psi.nrows(), dim);
    Ok(psi)
}

fn laplacian_unchecked(game: &GameProblem) -> DMatrix<f64> {
    let w = game.graph().weights();
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
    }
    l
}

/// Smallest eigenvalue of a symmetric matrix: dense eigen-solve up to dimension 2000,
/// shifted power iteration above.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    if a.nrows() <= 2000 {
        return SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    }
    // Gershgorin bound for the spectral radius gives a shift making `shift·I − A` PSD.
    let shift = (0..a.nrows()).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let b = DMatrix::identity(a.nrows(), a.nrows()) * shift - a;
    shift - power_iteration(&b, 10_000, 1e-12)
}

fn power_iteration(b: &DMatrix<f64>, max_iters: usize, tol: f64) -> f64 {
    let n = b.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..max_iters {
        let w = b * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - est).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        est = next;
    }
    est
}

/// Largest eigenvalue of the Laplacian, `‖L‖`.
pub fn laplacian_norm(game: &GameProblem) -> f64 {
    let l = laplacian_unchecked(game);
    -min_eigenvalue(&(-l))
}

/// `col(g_i(x_i))` stacked over agents (length `N m`).
pub fn stacked_coupling(game: &GameProblem, x: &DVector<f64>) -> DVector<f64> {
    let m = game.m();
    let mut g = DVector::zeros(game.n_players() * m);
    for i in 0..game.n_players() {
        game.coupling().value_into(i, &x.as_slice()[game.block(i)], &mut g.as_mut_slice()[i * m..(i + 1) * m]);
    }
    g
}

/// `𝐋 v` for a stacked dual-space vector.
pub fn apply_laplacian(game: &GameProblem, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    if game.m() > 0 {
        game.graph().apply_laplacian(v.as_slice(), game.m(), out.as_mut_slice());
    }
    out
}

/// `F(x) + ∇g(x)ᵀλ` with player `i` reading its own dual block `λ_i`.
pub fn primal_forward(game: &GameProblem, x: &DVector<f64>, lambda: &DVector<f64>, f_value: &DVector<f64>) -> DVector<f64> {
    let mut out = f_value.clone();
    if game.m() > 0 {
        for i in 0..game.n_players() {
            let r = game.block(i);
            game.coupling().add_jacobian_transpose(
                i,
                &x.as_slice()[r.clone()],
                &lambda.as_slice()[game.dual_block(i)],
                &mut out.as_mut_slice()[r],
            );
        }
    }
    out
}

/// `Ā(ω) = col(F(x) + ∇g(x)ᵀλ, 𝐋λ, 𝐋λ − g(x) − 𝐋z)` with the given `F` block.
pub fn extended_forward_a(game: &GameProblem, omega: &Omega, f_value: &DVector<f64>) -> Result<Omega> {
    check_shapes(game, omega, f_value)?;
    let l_lambda = apply_laplacian(game, &omega.lambda);
    let l_z = apply_laplacian(game, &omega.z);
    let g = stacked_coupling(game, &omega.x);
    Ok(Omega {
        x: primal_forward(game, &omega.x, &omega.lambda, f_value),
        lambda: &l_lambda - g - l_z,
        z: l_lambda,
    })
}

/// `C̄(ω) = col(F(x), 0, 𝐋λ + 𝐛)`.
pub fn extended_forward_c(game: &GameProblem, omega: &Omega, f_value: &DVector<f64>) -> Result<Omega> {
    if let Coupling::Separable { .. } = game.coupling() {
        return Err(Error::NonlinearCoupling("the cocoercive splitting"));
    }
    check_shapes(game, omega, f_value)?;
    let mut lambda = apply_laplacian(game, &omega.lambda);
    if let Some(a) = game.coupling().as_affine() {
        let m = game.m();
        for i in 0..game.n_players() {
            for r in 0..m {
                lambda[i * m + r] += a.offset(i)[r];
            }
        }
    }
    Ok(Omega { x: f_value.clone(), z: DVector::zeros(omega.z.len()), lambda })
}

fn check_shapes(game: &GameProblem, omega: &Omega, f_value: &DVector<f64>) -> Result<()> {
    let nm = game.n_players() * game.m();
    if omega.x.len() != game.n() || f_value.len() != game.n() || omega.z.len() != nm || omega.lambda.len() != nm {
        return Err(Error::Dimension(format!(
            "extended vector ({}, {}, {}) with F block {} for n = {}, Nm = {nm}",
            omega.x.len(),
            omega.z.len(),
            omega.lambda.len(),
            f_value.len(),
            game.n()
        )));
    }
    Ok(())
}

/// `(Id + Φ^{-1} B̄)^{-1} v`: prox of `α_i f_i` on x, identity on z, `max(·, 0)` on λ.
pub fn resolvent_b(game: &GameProblem, steps: &StepSizes, v: &Omega) -> Omega {
    let mut out = v.clone();
    for i in 0..game.n_players() {
        let r = game.block(i);
        game.local(i).prox(&v.x.as_slice()[r.clone()], steps.alpha[i], &mut out.x.as_mut_slice()[r]);
    }
    project_dual(&mut out.lambda);
    out
}

/// Same as [`resolvent_b`] with the x-block projected onto `Ω`; requires indicator terms.
pub fn resolvent_b_projection(game: &GameProblem, v: &Omega) -> Result<Omega> {
    let mut out = v.clone();
    for i in 0..game.n_players() {
        let r = game.block(i);
        game.local(i).project(i, &v.x.as_slice()[r.clone()], &mut out.x.as_mut_slice()[r])?;
    }
    project_dual(&mut out.lambda);
    Ok(out)
}

pub fn project_dual(lambda: &mut DVector<f64>) {
    lambda.iter_mut().for_each(|l| *l = l.max(0.0));
}

/// `‖x − proj(x − v)‖` with `proj` the local projector (unit-step prox).
pub fn residual(game: &GameProblem, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let p = game.project_local((x - v).as_slice());
    (x - p).norm()
}

/// Dual-augmented residual `‖x − proj(x − F(x) − ∇g(x)ᵀλ)‖` using each agent's own `λ_i`.
pub fn dual_augmented_residual(game: &GameProblem, x: &DVector<f64>, lambda: &DVector<f64>, f_value: &DVector<f64>) -> f64 {
    residual(game, x, &primal_forward(game, x, lambda, f_value))
}

/// `‖ω − J_B(ω − Φ^{-1}Ā(ω))‖`, zero exactly at zeros of `Ā + B̄`.
pub fn fixed_point_residual(game: &GameProblem, steps: &StepSizes, omega: &Omega, f_value: &DVector<f64>) -> Result<f64> {
    let a = extended_forward_a(game, omega, f_value)?;
    let next = resolvent_b(game, steps, &omega.sub(&steps.apply_inverse_phi(game, &a)));
    Ok(omega.sub(&next).norm())
}

/// How to obtain `F(x)` when no closed form exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledFallback {
    pub samples: u64,
    pub seed: u64,
}

/// `F(x)` from the exact oracle, or a sample mean when `fallback` is given.
pub fn pseudogradient_expected(game: &GameProblem, x: &DVector<f64>, fallback: Option<SampledFallback>) -> Result<DVector<f64>> {
    if game.has_exact_pseudogradient() {
        return exact_pseudogradient(game, x.as_slice());
    }
    match fallback {
        Some(f) => Ok(batch_mean_at(game, x.as_slice(), 0, f.samples, f.seed, Site::Diagnostics).value),
        None => Err(Error::MissingExactOracle),
    }
}

/// Upper bound `ℓ_Ā ≤ (ℓ_F + ℓ_L) + (ℓ_L + ℓ_g + B_∇g)` from the operator decomposition.
pub fn analytic_lipschitz_bound(game: &GameProblem, ell_f: f64) -> f64 {
    let ell_l = if game.m() > 0 { laplacian_norm(game) } else { 0.0 };
    let (ell_g, b_grad) = match game.coupling() {
        Coupling::None => (0.0, 0.0),
        Coupling::Separable { lipschitz_bound, grad_bound, .. } => (*lipschitz_bound, *grad_bound),
        Coupling::Affine(a) => {
            let norm = a.assembled().norm();
            (norm, norm)
        }
    };
    (ell_f + ell_l) + (ell_l + ell_g + b_grad)
}

/// Dense `L` checked against the graph assumptions.
pub fn checked_laplacian(game: &GameProblem) -> Result<DMatrix<f64>> {
    laplacian(game.graph())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::dvector;

    use super::*;
    use crate::game::{AffineCoupling, ClosureOracle, LocalTerm, MultiplierGraph};

    fn single(local: LocalTerm, b: f64) -> GameProblem {
        let a = AffineCoupling::new(vec![DMatrix::from_element(1, 1, 1.0)], vec![dvector![b]]).unwrap();
        let oracle = ClosureOracle::deterministic(1, |_, x, out: &mut [f64]| out[0] = x[0]);
        GameProblem::new("single", vec![1], vec![local], Coupling::Affine(a), MultiplierGraph::cycle(1).unwrap(), Arc::new(oracle))
            .unwrap()
    }

    fn omega(x: f64, z: f64, l: f64) -> Omega {
        Omega::new(dvector![x], dvector![z], dvector![l])
    }

    #[test]
    fn forward_a_hand_example() {
        let g = single(LocalTerm::Free(1), 1.0);
        let a = extended_forward_a(&g, &omega(2.0, 5.0, 3.0), &dvector![2.0]).unwrap();
        assert_eq!(a, omega(5.0, 0.0, -1.0));
    }

    #[test]
    fn forward_c_hand_example() {
        let g = single(LocalTerm::Free(1), 1.0);
        let c = extended_forward_c(&g, &omega(2.0, 5.0, 3.0), &dvector![2.0]).unwrap();
        assert_eq!(c, omega(2.0, 0.0, 1.0));
    }

    #[test]
    fn resolvent_examples() {
        let g = single(LocalTerm::Box { lower: vec![0.0], upper: vec![1.0] }, 1.0);
        let r = resolvent_b(&g, &StepSizes::uniform(1, 0.5), &omega(1.7, 5.2, -0.3));
        assert_eq!(r, omega(1.0, 5.2, 0.0));
    }

    #[test]
    fn residual_examples() {
        let free = single(LocalTerm::Free(1), 1.0);
        assert_eq!(residual(&free, &dvector![0.0], &dvector![-1.0]), 1.0);
        let boxed = single(LocalTerm::Box { lower: vec![0.0], upper: vec![0.3] }, 1.0);
        assert_eq!(residual(&boxed, &dvector![0.3], &dvector![0.3 - 1.0]), 0.0);
    }

    #[test]
    fn phi_from_half_steps() {
        let g = single(LocalTerm::Free(1), 1.0);
        let s = build_phi(&g, &StepSizes::uniform(1, 0.5)).unwrap();
        assert_eq!(s.steps.phi_diagonal(&g), DVector::from_element(3, 2.0));
        assert_eq!(s.phi_min_eig, 2.0);
        let bad = StepSizes { alpha: vec![0.0], ..StepSizes::uniform(1, 0.5) };
        assert!(build_phi(&g, &bad).is_err());
    }

    #[test]
    fn psi_blocks() {
        let g = single(LocalTerm::Free(1), 1.0);
        let p = psi_matrix(&g, &StepSizes::uniform3(1, 0.5, 0.25, 0.125)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, -1.0, 0.0, 4.0, 0.0, -1.0, 0.0, 8.0]);
        assert_eq!(p, expected);
    }

    #[test]
    fn power_iteration_matches_dense() {
        let a = DMatrix::from_fn(30, 30, |i, j| if i == j { 3.0 + i as f64 * 0.1 } else { 1.0 / (1.0 + (i + j) as f64) });
        let a = (&a + a.transpose()) * 0.5;
        let dense = SymmetricEigen::new(a.clone()).eigenvalues.min();
        let shift = 10.0;
        let b = DMatrix::identity(30, 30) * shift - &a;
        let approx = shift - power_iteration(&b, 100_000, 1e-15);
        assert!((dense - approx).abs() < 1e-6, "{dense} vs {approx}");
    }
}
