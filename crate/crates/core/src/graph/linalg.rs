//! Dense helpers for the smoother's normal equations.

use nalgebra::{DMatrix, SMatrix};

use crate::error::{Error, Result};

pub type Block = SMatrix<f64, 15, 15>;

/// Cholesky factor of a symmetric block-tridiagonal matrix with 15×15 blocks.
///
/// `diag[k]` is block `(k, k)`; `lower[k]` is block `(k, k−1)` (`lower[0]` unused).
#[derive(Debug, Clone)]
pub struct BlockTridiagonalCholesky {
    /// Inverses of the lower-triangular diagonal factors `L_k`.
    l_inv: Vec<Block>,
    /// Sub-diagonal factors `S_k = A_{k,k−1} L_{k−1}⁻ᵀ`.
    s: Vec<Block>,
}

/// Right-hand-side columns solved together.
const CHUNK: usize = 8;

impl BlockTridiagonalCholesky {
    pub fn factor(diag: &[Block], lower: &[Block]) -> Result<Self> {
        let n = diag.len();
        let mut l_inv: Vec<Block> = Vec::with_capacity(n);
        let mut s: Vec<Block> = Vec::with_capacity(n);
        for k in 0..n {
            let mut d = diag[k];
            let sk = if k == 0 {
                Block::zeros()
            } else {
                // S_k = A_{k,k−1} L_{k−1}⁻ᵀ
                let sk = lower[k] * l_inv[k - 1].transpose();
                d -= sk * sk.transpose();
                sk
            };
            let chol = d
                .cholesky()
                .ok_or_else(|| Error::SolverFailure(format!("block {k} is not positive definite")))?;
            let inv = chol
                .l()
                .solve_lower_triangular(&Block::identity())
                .ok_or_else(|| Error::SolverFailure("singular block".into()))?;
            l_inv.push(inv);
            s.push(sk);
        }
        Ok(Self { l_inv, s })
    }

    pub fn blocks(&self) -> usize {
        self.l_inv.len()
    }

    /// Solves `A X = B` in place; `B` has `15 · blocks` rows.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        let rows = b.nrows();
        let cols = b.ncols();
        let data = b.as_mut_slice();
        let mut c = 0;
        while c + CHUNK <= cols {
            self.solve_chunk::<CHUNK>(&mut data[rows * c..rows * (c + CHUNK)], rows);
            c += CHUNK;
        }
        while c < cols {
            self.solve_chunk::<1>(&mut data[rows * c..rows * (c + 1)], rows);
            c += 1;
        }
    }

    /// `x` holds `C` consecutive columns of length `rows`.
    fn solve_chunk<const C: usize>(&self, x: &mut [f64], rows: usize) {
        let n = self.l_inv.len();
        let load = |x: &[f64], k: usize| SMatrix::<f64, 15, C>::from_fn(|r, j| x[rows * j + 15 * k + r]);
        let store = |x: &mut [f64], k: usize, m: &SMatrix<f64, 15, C>| {
            for j in 0..C {
                x[rows * j + 15 * k..rows * j + 15 * k + 15].copy_from_slice(m.column(j).as_slice());
            }
        };
        // Forward: L y = b.
        let mut prev = SMatrix::<f64, 15, C>::zeros();
        for k in 0..n {
            let mut cur = load(x, k);
            if k > 0 {
                cur -= self.s[k] * prev;
            }
            prev = self.l_inv[k] * cur;
            store(x, k, &prev);
        }
        // Backward: Lᵀ x = y.
        let mut next = SMatrix::<f64, 15, C>::zeros();
        for k in (0..n).rev() {
            let mut cur = load(x, k);
            if k + 1 < n {
                cur -= self.s[k + 1].tr_mul(&next);
            }
            next = self.l_inv[k].tr_mul(&cur);
            store(x, k, &next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let mut diag = Vec::new();
        let mut lower = vec![Block::zeros()];
        for _ in 0..n {
            let a = Block::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            diag.push(a * a.transpose() + Block::identity() * 8.0);
        }
        for _ in 1..n {
            lower.push(Block::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        }
        let mut dense = DMatrix::zeros(15 * n, 15 * n);
        for k in 0..n {
            dense.view_mut((15 * k, 15 * k), (15, 15)).copy_from(&diag[k]);
            if k > 0 {
                dense.view_mut((15 * k, 15 * (k - 1)), (15, 15)).copy_from(&lower[k]);
                dense.view_mut((15 * (k - 1), 15 * k), (15, 15)).copy_from(&lower[k].transpose());
            }
        }
        let b = DMatrix::from_fn(15 * n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let chol = BlockTridiagonalCholesky::factor(&diag, &lower).unwrap();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        assert!((&dense * &x - &b).amax() < 1e-10);
    }

    #[test]
    fn rejects_indefinite() {
        let diag = vec![-Block::identity()];
        assert!(BlockTridiagonalCholesky::factor(&diag, &[Block::zeros()]).is_err());
    }
}
