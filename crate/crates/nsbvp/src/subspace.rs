//! Subspaces of the truncated coefficient space, each carried by a basis
//! that is orthonormal for a declared metric `<u, v> = <W u, W v>`.
//!
//! Every rank decision goes through one tolerance; singular values close
//! to it raise `AmbiguousRank`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hstack, pinv, spectral_norm, svd_full, zeros, CMat, RankInfo, Tolerances, EPS};

/// Floor for subspace rank decisions on unit-scale stacked bases.
pub const SUBSPACE_RANK_FLOOR: f64 = 1e-9;

/// Relative norm below which an input column is discarded before normalization.
pub const COLUMN_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    L2,
    Modulus,
    Reference,
    Check,
    Hat,
    Custom,
}

/// Injective weight `W` (rows >= ambient dimension) with a cached left inverse.
#[derive(Clone, Debug)]
pub struct Metric {
    pub s: f64,
    pub kind: WeightKind,
    pub w: CMat,
    left_inv: CMat,
}

impl Metric {
    pub fn new(s: f64, kind: WeightKind, w: CMat) -> Self {
        let left_inv = pinv(&w, 1e-14 * spectral_norm(&w).max(1e-300));
        Metric { s, kind, w, left_inv }
    }

    pub fn l2(m: usize) -> Arc<Self> {
        Arc::new(Metric::new(0.0, WeightKind::L2, CMat::identity(m, m)))
    }

    pub fn ambient(&self) -> usize {
        self.w.ncols()
    }

    /// Gram matrix `W^H W`.
    pub fn gram(&self) -> CMat {
        self.w.adjoint() * &self.w
    }

    pub fn norm(&self, u: &crate::linalg::CVec) -> f64 {
        (&self.w * u).norm()
    }
}

/// Rank threshold for a matrix of norm `nrm`.
pub fn subspace_rank_tol(nrm: f64, tols: &Tolerances) -> f64 {
    (tols.rank_factor * EPS * nrm).max(SUBSPACE_RANK_FLOOR)
}

fn decide(s: &[f64], nrm: f64, tols: &Tolerances) -> Result<RankInfo> {
    let info = RankInfo::from_singular_values(s, subspace_rank_tol(nrm, tols));
    info.strict()?;
    Ok(info)
}

#[derive(Clone, Debug)]
pub struct Subspace {
    pub basis: CMat,
    pub metric: Arc<Metric>,
}

impl Subspace {
    /// Orthonormalize the span of `cols` in `metric`.
    pub fn from_columns(cols: &CMat, metric: Arc<Metric>, tols: &Tolerances) -> Result<Self> {
        let m = metric.ambient();
        if cols.nrows() != m {
            return Err(Error::DimensionMismatch { expected: m, got: cols.nrows() });
        }
        if cols.ncols() == 0 {
            return Ok(Subspace { basis: zeros(m, 0), metric });
        }
        let wc = &metric.w * cols;
        // scale columns so the tolerance is relative to each vector; columns at
        // rounding level relative to the largest are treated as zero
        let mut wn = wc.clone();
        let largest = (0..wn.ncols()).map(|j| wn.column(j).norm()).fold(0.0, f64::max);
        for j in 0..wn.ncols() {
            let n = wn.column(j).norm();
            if n > COLUMN_FLOOR * largest {
                wn.column_mut(j).scale_mut(1.0 / n);
            } else {
                wn.column_mut(j).fill(crate::linalg::cr(0.0));
            }
        }
        let (u, s, _) = svd_full(&wn);
        let info = decide(&s, s.first().copied().unwrap_or(0.0), tols)?;
        let z = u.columns(0, info.rank).into_owned();
        Ok(Subspace { basis: metric.left_inv.clone() * z, metric })
    }

    pub fn zero(metric: Arc<Metric>) -> Self {
        let m = metric.ambient();
        Subspace { basis: zeros(m, 0), metric }
    }

    pub fn whole(metric: Arc<Metric>, tols: &Tolerances) -> Result<Self> {
        let m = metric.ambient();
        Self::from_columns(&CMat::identity(m, m), metric, tols)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn whitened(&self) -> CMat {
        &self.metric.w * &self.basis
    }

    /// Same span, orthonormal in another metric.
    pub fn with_metric(&self, metric: Arc<Metric>, tols: &Tolerances) -> Result<Self> {
        Self::from_columns(&self.basis, metric, tols)
    }

    /// Orthogonal projector onto the span in the metric.
    pub fn projector(&self) -> CMat {
        &self.basis * self.basis.adjoint() * self.metric.gram()
    }

    pub fn intersection(&self, other: &Subspace, tols: &Tolerances) -> Result<Subspace> {
        let (dx, dy) = (self.dim(), other.dim());
        if dx == 0 || dy == 0 {
            return Ok(Subspace::zero(self.metric.clone()));
        }
        let stacked = hstack(&[&self.whitened(), &(-other.whitened())]);
        let (_, s, v) = svd_full(&stacked);
        let info = decide(&s, 1.0, tols)?;
        let n = dx + dy;
        let null = v.columns(info.rank, n - info.rank).into_owned();
        let coeffs = null.rows(0, dx).into_owned();
        Self::from_columns(&(&self.basis * coeffs), self.metric.clone(), tols)
    }

    pub fn sum(&self, other: &Subspace, tols: &Tolerances) -> Result<Subspace> {
        Self::from_columns(&hstack(&[&self.basis, &other.basis]), self.metric.clone(), tols)
    }

    /// `{v : <P x, v> = 0 for all x in self}` with the L2 pairing, orthonormal in `target`.
    pub fn annihilator(&self, pairing: &CMat, target: Arc<Metric>, tols: &Tolerances) -> Result<Subspace> {
        let m = self.ambient();
        if self.dim() == 0 {
            return Subspace::whole(target, tols);
        }
        let px = pairing * &self.basis;
        let mut rows = px.adjoint();
        for i in 0..rows.nrows() {
            let n = rows.row(i).norm();
            if n > 0.0 {
                rows.row_mut(i).scale_mut(1.0 / n);
            }
        }
        let (_, s, v) = svd_full(&rows);
        let info = decide(&s, s.first().copied().unwrap_or(0.0), tols)?;
        let null = v.columns(info.rank, m - info.rank).into_owned();
        Subspace::from_columns(&null, target, tols)
    }

    /// Complement orthogonal in the subspace's own metric.
    pub fn complement(&self, tols: &Tolerances) -> Result<Subspace> {
        self.annihilator(&self.metric.gram(), self.metric.clone(), tols)
    }

    /// Complement of `self` inside `within`, orthogonal in the metric.
    pub fn complement_within(&self, within: &Subspace, tols: &Tolerances) -> Result<Subspace> {
        within.intersection(&self.complement(tols)?, tols)
    }

    /// Image under a linear map, orthonormalized in the same metric.
    pub fn image(&self, map: &CMat, tols: &Tolerances) -> Result<Subspace> {
        Self::from_columns(&(map * &self.basis), self.metric.clone(), tols)
    }

    /// `sin` of the largest principal angle between equal-dimensional spans; 1 otherwise.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.dim() != other.dim() {
            return 1.0;
        }
        if self.dim() == 0 {
            return 0.0;
        }
        let x = self.whitened();
        let y = other.whitened();
        let r = &y - &x * (x.adjoint() * &y);
        spectral_norm(&r)
    }

    /// True if every basis vector of `other` lies in `self` to tolerance.
    pub fn contains(&self, other: &Subspace, tol: f64) -> bool {
        let x = self.whitened();
        let y = other.whitened();
        spectral_norm(&(&y - &x * (x.adjoint() * &y))) <= tol
    }
}

/// Dimensions describing the pair `(X, Y)` in a finite-dimensional ambient space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FredholmPairReport {
    pub dim_x: usize,
    pub dim_y: usize,
    pub ambient: usize,
    pub dim_intersection: usize,
    pub dim_cokernel: usize,
    pub index: i64,
}

pub fn fredholm_pair(x: &Subspace, y: &Subspace, tols: &Tolerances) -> Result<FredholmPairReport> {
    if x.ambient() != y.ambient() {
        return Err(Error::DimensionMismatch { expected: x.ambient(), got: y.ambient() });
    }
    let inter = x.intersection(y, tols)?.dim();
    let sum = x.sum(y, tols)?.dim();
    let m = x.ambient();
    let coker = m - sum;
    Ok(FredholmPairReport {
        dim_x: x.dim(),
        dim_y: y.dim(),
        ambient: m,
        dim_intersection: inter,
        dim_cokernel: coker,
        index: inter as i64 - coker as i64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_matrix, seeded};

    #[test]
    fn intersection_and_sum_dims() {
        let mut rng = seeded(3, 0);
        let m = 8;
        let metric = Metric::l2(m);
        let tols = Tolerances::default();
        let common = complex_matrix(&mut rng, m, 2);
        let x = Subspace::from_columns(&hstack(&[&common, &complex_matrix(&mut rng, m, 2)]), metric.clone(), &tols)
            .unwrap();
        let y = Subspace::from_columns(&hstack(&[&common, &complex_matrix(&mut rng, m, 3)]), metric.clone(), &tols)
            .unwrap();
        let rep = fredholm_pair(&x, &y, &tols).unwrap();
        assert_eq!(rep.dim_intersection, 2);
        assert_eq!(rep.dim_cokernel, 8 - 7);
        assert_eq!(rep.index, rep.dim_x as i64 + rep.dim_y as i64 - m as i64);
    }

    #[test]
    fn weighted_basis_is_orthonormal() {
        let mut rng = seeded(4, 0);
        let m = 6;
        let w = complex_matrix(&mut rng, m, m) + CMat::identity(m, m) * crate::linalg::cr(3.0);
        let metric = Arc::new(Metric::new(0.5, WeightKind::Custom, w));
        let x = Subspace::from_columns(&complex_matrix(&mut rng, m, 3), metric, &Tolerances::default()).unwrap();
        let g = x.whitened().adjoint() * x.whitened();
        assert!((g - CMat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn complement_is_reflexive() {
        let mut rng = seeded(5, 0);
        let m = 7;
        let tols = Tolerances::default();
        let metric = Arc::new(Metric::new(
            0.0,
            WeightKind::Custom,
            complex_matrix(&mut rng, m, m) + CMat::identity(m, m) * crate::linalg::cr(4.0),
        ));
        let x = Subspace::from_columns(&complex_matrix(&mut rng, m, 3), metric, &tols).unwrap();
        let cc = x.complement(&tols).unwrap().complement(&tols).unwrap();
        assert!(x.distance(&cc) < 1e-10);
    }

    #[test]
    fn near_dependent_columns_are_ambiguous() {
        let mut rng = seeded(6, 0);
        let a = complex_matrix(&mut rng, 5, 1);
        let b = &a + complex_matrix(&mut rng, 5, 1) * crate::linalg::cr(1e-9);
        let r = Subspace::from_columns(&hstack(&[&a, &b]), Metric::l2(5), &Tolerances::default());
        assert!(matches!(r, Err(Error::AmbiguousRank { .. })));
    }
}
