use rayon::prelude::*;

use super::{block_diag, cr, spectral_norm, zeros, CMat, CVec, C64};
use crate::error::{Error, Result};

/// Block-diagonal operator. A dense matrix is the one-block case.
///
/// Translation-invariant operators on a torus stay blocked (one block per
/// Fourier mode); variable-coefficient ones collapse to a single block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiag {
    blocks: Vec<CMat>,
}

impl BlockDiag {
    pub fn from_blocks(blocks: Vec<CMat>) -> Self {
        BlockDiag { blocks }
    }

    pub fn dense(m: CMat) -> Self {
        BlockDiag { blocks: vec![m] }
    }

    pub fn identity_like(&self) -> Self {
        BlockDiag { blocks: self.blocks.iter().map(|b| CMat::identity(b.nrows(), b.ncols())).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        BlockDiag { blocks: self.blocks.iter().map(|b| zeros(b.nrows(), b.ncols())).collect() }
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<CMat> {
        self.blocks
    }

    pub fn is_dense(&self) -> bool {
        self.blocks.len() == 1
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    /// Start offset of every block plus the total size.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        out.push(0);
        for b in &self.blocks {
            acc += b.nrows();
            out.push(acc);
        }
        out
    }

    pub fn same_layout(&self, other: &BlockDiag) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn to_dense(&self) -> CMat {
        if self.blocks.len() == 1 {
            return self.blocks[0].clone();
        }
        block_diag(&self.blocks)
    }

    pub fn map<F>(&self, f: F) -> Result<BlockDiag>
    where
        F: Fn(&CMat) -> Result<CMat> + Sync + Send,
    {
        let blocks: Result<Vec<CMat>> = self.blocks.par_iter().map(f).collect();
        Ok(BlockDiag { blocks: blocks? })
    }

    pub fn map_ok<F>(&self, f: F) -> BlockDiag
    where
        F: Fn(&CMat) -> CMat + Sync + Send,
    {
        BlockDiag { blocks: self.blocks.par_iter().map(f).collect() }
    }

    /// Combine two operators blockwise; densifies when layouts differ.
    pub fn zip<F>(&self, other: &BlockDiag, f: F) -> BlockDiag
    where
        F: Fn(&CMat, &CMat) -> CMat + Sync + Send,
    {
        if self.same_layout(other) {
            BlockDiag {
                blocks: self.blocks.par_iter().zip(other.blocks.par_iter()).map(|(a, b)| f(a, b)).collect(),
            }
        } else {
            BlockDiag::dense(f(&self.to_dense(), &other.to_dense()))
        }
    }

    pub fn mul(&self, other: &BlockDiag) -> BlockDiag {
        self.zip(other, |a, b| a * b)
    }

    pub fn add(&self, other: &BlockDiag) -> BlockDiag {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &BlockDiag) -> BlockDiag {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> BlockDiag {
        self.map_ok(|b| b * s)
    }

    /// `self - r I`.
    pub fn shift(&self, r: f64) -> BlockDiag {
        self.map_ok(|b| {
            let mut m = b.clone();
            for i in 0..m.nrows().min(m.ncols()) {
                m[(i, i)] -= cr(r);
            }
            m
        })
    }

    pub fn adjoint(&self) -> BlockDiag {
        self.map_ok(|b| b.adjoint())
    }

    pub fn apply(&self, u: &CVec) -> Result<CVec> {
        let n = self.dim();
        if u.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: u.len() });
        }
        let mut out = CVec::zeros(n);
        let mut off = 0;
        for b in &self.blocks {
            let k = b.ncols();
            let seg = u.rows(off, k).into_owned();
            out.rows_mut(off, b.nrows()).copy_from(&(b * seg));
            off += k;
        }
        Ok(out)
    }

    /// Apply to every column of `x`.
    pub fn apply_mat(&self, x: &CMat) -> Result<CMat> {
        let n = self.dim();
        if x.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.nrows() });
        }
        let mut out = zeros(n, x.ncols());
        let mut off = 0;
        for b in &self.blocks {
            let k = b.ncols();
            let seg = x.rows(off, k).into_owned();
            out.rows_mut(off, b.nrows()).copy_from(&(b * seg));
            off += k;
        }
        Ok(out)
    }

    pub fn norm2(&self) -> f64 {
        self.blocks.par_iter().map(spectral_norm).reduce(|| 0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn blockwise_product_matches_dense() {
        let a = BlockDiag::from_blocks(vec![
            CMat::from_fn(2, 2, |i, j| c(i as f64, j as f64)),
            CMat::from_fn(3, 3, |i, j| c((i + j) as f64, 1.0)),
        ]);
        let b = a.adjoint().shift(0.5);
        let dense = a.to_dense() * b.to_dense();
        assert!((a.mul(&b).to_dense() - dense).norm() < 1e-13);
        let mixed = a.mul(&BlockDiag::dense(b.to_dense()));
        assert!(mixed.is_dense());
        let u = CVec::from_fn(5, |i, _| c(i as f64, -1.0));
        assert!((a.apply(&u).unwrap() - a.to_dense() * &u).norm() < 1e-13);
    }
}
