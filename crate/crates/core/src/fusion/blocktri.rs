//! Symmetric block-tridiagonal systems: solve and marginal covariances.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

/// Symmetric positive-definite matrix with `diag[k] = H_kk` and
/// `upper[k] = H_{k,k+1}`.
#[derive(Clone, Debug)]
pub struct BlockTridiag<const N: usize> {
    pub diag: Vec<SMatrix<f64, N, N>>,
    pub upper: Vec<SMatrix<f64, N, N>>,
}

/// Inverse of an SPD block via Cholesky on the Jacobi-scaled matrix, which
/// keeps badly scaled state blocks (radians next to m/s² biases) accurate.
pub fn inv_spd<const N: usize>(m: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    let d = SVector::<f64, N>::from_fn(|i, _| {
        let v = m[(i, i)];
        if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }
    });
    let scaled = SMatrix::<f64, N, N>::from_fn(|i, j| m[(i, j)] * d[i] * d[j]);
    let inv = scaled.cholesky()?.inverse();
    Some(SMatrix::<f64, N, N>::from_fn(|i, j| inv[(i, j)] * d[i] * d[j]))
}

impl<const N: usize> BlockTridiag<N> {
    pub fn new(n_blocks: usize) -> Self {
        BlockTridiag {
            diag: vec![SMatrix::zeros(); n_blocks],
            upper: vec![SMatrix::zeros(); n_blocks.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Schur complements of the forward elimination, already inverted:
    /// S_0 = D_0, S_k = D_k − C_{k−1}ᵀ S_{k−1}⁻¹ C_{k−1}.
    fn forward(&self) -> Result<Vec<SMatrix<f64, N, N>>> {
        let mut s_inv = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let mut s = self.diag[k];
            if k > 0 {
                let c = &self.upper[k - 1];
                s -= c.transpose() * s_inv[k - 1] * c;
            }
            s = 0.5 * (s + s.transpose());
            s_inv.push(inv_spd(&s).ok_or_else(|| Error::Rank(format!("block {k} is not positive definite")))?);
        }
        Ok(s_inv)
    }

    /// Solves `H x = b` by block forward elimination and back substitution.
    pub fn solve(&self, b: &[SVector<f64, N>]) -> Result<Vec<SVector<f64, N>>> {
        if b.len() != self.len() {
            return Err(Error::Data("right-hand side size mismatch".into()));
        }
        let s_inv = self.forward()?;
        let mut y = b.to_vec();
        for k in 1..self.len() {
            let t = self.upper[k - 1].transpose() * (s_inv[k - 1] * y[k - 1]);
            y[k] -= t;
        }
        let n = self.len();
        let mut x = vec![SVector::zeros(); n];
        for k in (0..n).rev() {
            let mut r = y[k];
            if k + 1 < n {
                r -= self.upper[k] * x[k + 1];
            }
            x[k] = s_inv[k] * r;
        }
        Ok(x)
    }

    /// Diagonal blocks of `H⁻¹` (smoothed marginals) and the forward
    /// (filtered) marginals. `next_part[k]` is the share of `diag[k]`
    /// contributed by factors that also involve block k+1; removing it from
    /// the k-th Schur complement leaves the information about block k from
    /// factors over blocks ≤ k only.
    pub fn marginals(
        &self,
        next_part: &[SMatrix<f64, N, N>],
    ) -> Result<(Vec<SMatrix<f64, N, N>>, Vec<SMatrix<f64, N, N>>)> {
        let n = self.len();
        let s_inv = self.forward()?;
        let mut filtered = Vec::with_capacity(n);
        for k in 0..n {
            let mut f = self.diag[k] - next_part[k];
            if k > 0 {
                let c = &self.upper[k - 1];
                f -= c.transpose() * s_inv[k - 1] * c;
            }
            f = 0.5 * (f + f.transpose());
            filtered.push(inv_spd(&f).ok_or_else(|| Error::Rank(format!("filtered block {k} is singular")))?);
        }
        let mut smoothed = vec![SMatrix::zeros(); n];
        if n > 0 {
            smoothed[n - 1] = s_inv[n - 1];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let g = s_inv[k] * self.upper[k];
            smoothed[k] = s_inv[k] + g * smoothed[k + 1] * g.transpose();
        }
        Ok((smoothed, filtered))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

    fn example() -> (BlockTridiag<2>, DMatrix<f64>) {
        let mut bt = BlockTridiag::<2>::new(4);
        for k in 0..4 {
            bt.diag[k] = Matrix2::new(4.0 + k as f64, 0.5, 0.5, 3.0);
        }
        for k in 0..3 {
            bt.upper[k] = Matrix2::new(-1.0, 0.2, 0.1, -0.7);
        }
        let mut dense = DMatrix::zeros(8, 8);
        for k in 0..4 {
            dense.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&bt.diag[k]);
        }
        for k in 0..3 {
            dense.view_mut((2 * k, 2 * k + 2), (2, 2)).copy_from(&bt.upper[k]);
            dense.view_mut((2 * k + 2, 2 * k), (2, 2)).copy_from(&bt.upper[k].transpose());
        }
        (bt, dense)
    }

    #[test]
    fn solve_matches_dense() {
        let (bt, dense) = example();
        let b: Vec<_> = (0..4).map(|k| Vector2::new(k as f64, 1.0 - k as f64)).collect();
        let x = bt.solve(&b).unwrap();
        let bd = DVector::from_iterator(8, b.iter().flat_map(|v| v.iter().copied()));
        let xd = dense.clone().lu().solve(&bd).unwrap();
        for k in 0..4 {
            assert!((x[k] - xd.fixed_rows::<2>(2 * k)).norm() < 1e-12);
        }
    }

    #[test]
    fn smoothed_marginals_match_dense_inverse() {
        let (bt, dense) = example();
        let inv = dense.try_inverse().unwrap();
        let (sm, _) = bt.marginals(&vec![Matrix2::zeros(); 4]).unwrap();
        for k in 0..4 {
            assert!((sm[k] - inv.view((2 * k, 2 * k), (2, 2))).norm() < 1e-12);
        }
    }

    #[test]
    fn filtered_marginal_is_prefix_marginal() {
        // chain with one scalar prior and unit random-walk links: x_{k+1} − x_k ~ N(0,1)
        let n = 5;
        let mut bt = BlockTridiag::<1>::new(n);
        let mut next = vec![SMatrix::<f64, 1, 1>::zeros(); n];
        bt.diag[0][(0, 0)] = 1.0;
        for k in 0..n - 1 {
            bt.diag[k][(0, 0)] += 1.0;
            next[k][(0, 0)] = 1.0;
            bt.diag[k + 1][(0, 0)] += 1.0;
            bt.upper[k][(0, 0)] = -1.0;
        }
        let (_, filt) = bt.marginals(&next).unwrap();
        // forward variances accumulate: 1, 2, 3, ...
        for (k, f) in filt.iter().enumerate() {
            assert!((f[(0, 0)] - (k + 1) as f64).abs() < 1e-12, "{k}: {}", f[(0, 0)]);
        }
    }

    #[test]
    fn singular_block_is_a_rank_error() {
        let bt = BlockTridiag::<2>::new(2);
        assert!(matches!(bt.solve(&[Vector2::zeros(), Vector2::zeros()]), Err(Error::Rank(_))));
    }

    #[test]
    fn scaled_inverse_handles_wide_dynamic_range() {
        let m = SMatrix::<f64, 3, 3>::new(1e12, 1e5, 0.0, 1e5, 1.0, 1e-3, 0.0, 1e-3, 1e-4);
        let inv = inv_spd(&m).unwrap();
        let id = m * inv;
        assert!((id - SMatrix::<f64, 3, 3>::identity()).norm() < 1e-8, "{id}");
    }
}
