use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One agent's share `g_i(x_i)` of a separable coupling constraint `sum_i g_i(x_i) <= 0`.
pub trait SeparableConstraint: Send + Sync {
    /// Writes `g_i(x_i)` (length `m`) into `out`.
    fn value(&self, player: usize, x_i: &[f64], out: &mut [f64]);

    /// Jacobian of `g_i` at `x_i`, an `m x n_i` matrix.
    fn jacobian(&self, player: usize, x_i: &[f64]) -> DMatrix<f64>;
}

/// Shared constraints of a game.
#[derive(Clone)]
pub enum Coupling {
    /// No shared constraints (`m = 0`).
    None,
    /// Convex differentiable separable coupling with caller-supplied bounds
    /// (`lipschitz_bound` on `g`, `grad_bound` on its Jacobian).
    Separable {
        m: usize,
        constraint: Arc<dyn SeparableConstraint>,
        lipschitz_bound: f64,
        grad_bound: f64,
    },
    /// `sum_i (A_i x_i - b_i) <= 0`.
    Affine(AffineCoupling),
}

impl std::fmt::Debug for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coupling::None => write!(f, "Coupling::None"),
            Coupling::Separable { m, lipschitz_bound, grad_bound, .. } => f
                .debug_struct("Coupling::Separable")
                .field("m", m)
                .field("lipschitz_bound", lipschitz_bound)
                .field("grad_bound", grad_bound)
                .finish(),
            Coupling::Affine(a) => a.fmt(f),
        }
    }
}

impl Coupling {
    pub fn m(&self) -> usize {
        match self {
            Coupling::None => 0,
            Coupling::Separable { m, .. } => *m,
            Coupling::Affine(a) => a.m(),
        }
    }

    /// Affine couplings, including the empty one, admit the preconditioned splitting.
    pub fn is_affine(&self) -> bool {
        matches!(self, Coupling::None | Coupling::Affine(_))
    }

    pub fn as_affine(&self) -> Option<&AffineCoupling> {
        match self {
            Coupling::Affine(a) => Some(a),
            _ => None,
        }
    }

    /// `g_i(x_i)`.
    pub fn value_into(&self, player: usize, x_i: &[f64], out: &mut [f64]) {
        match self {
            Coupling::None => {}
            Coupling::Separable { constraint, .. } => constraint.value(player, x_i, out),
            Coupling::Affine(a) => a.value_into(player, x_i, out),
        }
    }

    /// Adds `∇g_i(x_i)^T λ_i` to `out` (length `n_i`).
    pub fn add_jacobian_transpose(&self, player: usize, x_i: &[f64], lambda_i: &[f64], out: &mut [f64]) {
        match self {
            Coupling::None => {}
            Coupling::Separable { constraint, .. } => {
                let jac = constraint.jacobian(player, x_i);
                let y = jac.tr_mul(&DVector::from_column_slice(lambda_i));
                for (o, v) in out.iter_mut().zip(y.iter()) {
                    *o += v;
                }
            }
            Coupling::Affine(a) => a.add_transpose_into(player, lambda_i, out),
        }
    }

    pub fn jacobian(&self, player: usize, x_i: &[f64]) -> DMatrix<f64> {
        match self {
            Coupling::None => DMatrix::zeros(0, x_i.len()),
            Coupling::Separable { constraint, .. } => constraint.jacobian(player, x_i),
            Coupling::Affine(a) => a.blocks[player].clone(),
        }
    }
}

/// Affine coupling `A x - b` with `A = [A_1, ..., A_N]` and `b = sum_i b_i`.
#[derive(Clone, Debug)]
pub struct AffineCoupling {
    blocks: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
}

impl AffineCoupling {
    pub fn new(blocks: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != offsets.len() {
            return Err(Error::Dimension(format!(
                "{} constraint blocks but {} offsets",
                blocks.len(),
                offsets.len()
            )));
        }
        let m = blocks[0].nrows();
        if blocks.iter().any(|a| a.nrows() != m) || offsets.iter().any(|b| b.len() != m) {
            return Err(Error::Dimension("all A_i and b_i must have m rows".into()));
        }
        Ok(Self { blocks, offsets })
    }

    /// Splits the total right-hand side evenly, `b_i = b / N`.
    pub fn with_even_split(blocks: Vec<DMatrix<f64>>, b: &DVector<f64>) -> Result<Self> {
        let n = blocks.len().max(1) as f64;
        let offsets = vec![b / n; blocks.len()];
        Self::new(blocks, offsets)
    }

    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn block(&self, player: usize) -> &DMatrix<f64> {
        &self.blocks[player]
    }

    pub fn offset(&self, player: usize) -> &DVector<f64> {
        &self.offsets[player]
    }

    pub fn total_offset(&self) -> DVector<f64> {
        self.offsets.iter().fold(DVector::zeros(self.m()), |acc, b| acc + b)
    }

    pub fn value_into(&self, player: usize, x_i: &[f64], out: &mut [f64]) {
        let a = &self.blocks[player];
        let b = &self.offsets[player];
        for r in 0..a.nrows() {
            let mut s = -b[r];
            for c in 0..a.ncols() {
                s += a[(r, c)] * x_i[c];
            }
            out[r] = s;
        }
    }

    pub fn add_transpose_into(&self, player: usize, lambda_i: &[f64], out: &mut [f64]) {
        let a = &self.blocks[player];
        for c in 0..a.ncols() {
            let mut s = 0.0;
            for r in 0..a.nrows() {
                s += a[(r, c)] * lambda_i[r];
            }
            out[c] += s;
        }
    }

    /// Global matrix `A = [A_1, ..., A_N]`.
    pub fn assembled(&self) -> DMatrix<f64> {
        let n: usize = self.blocks.iter().map(|a| a.ncols()).sum();
        let mut a = DMatrix::zeros(self.m(), n);
        let mut col = 0;
        for blk in &self.blocks {
            a.view_mut((0, col), (blk.nrows(), blk.ncols())).copy_from(blk);
            col += blk.ncols();
        }
        a
    }

    /// The same constraint expressed through the generic separable interface.
    pub fn to_separable(&self) -> Coupling {
        // Frobenius norm bounds the spectral norm of A.
        let ell = self.assembled().norm();
        Coupling::Separable {
            m: self.m(),
            constraint: Arc::new(self.clone()),
            lipschitz_bound: ell,
            grad_bound: ell,
        }
    }
}

impl SeparableConstraint for AffineCoupling {
    fn value(&self, player: usize, x_i: &[f64], out: &mut [f64]) {
        self.value_into(player, x_i, out)
    }

    fn jacobian(&self, player: usize, _x_i: &[f64]) -> DMatrix<f64> {
        self.blocks[player].clone()
    }
}
