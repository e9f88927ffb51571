//! Dense complex linear algebra shared by every module.
//!
//! Rank decisions go through [`Tolerances`]; everything else is thin
//! glue over `nalgebra` (SVD, LU, Hermitian eigensolver, complex Schur).

mod blockdiag;
mod matfun;
mod quad;
mod schur;

pub use blockdiag::BlockDiag;
pub use matfun::{cauchy_taylor, ExpNeg, FnOf, FunctionalCalculus, Power, PsiAlpha, ScalarFn};
pub use quad::{gauss_legendre, graded_panels, log_grid};
pub use schur::{invariant_projector, sylvester_upper, SchurForm};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const EPS: f64 = f64::EPSILON;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Tolerances for rank and eigenvalue-cluster decisions.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// Rank threshold is `rank_factor * EPS * ||M||_2`.
    pub rank_factor: f64,
    /// Eigenvalues within `cluster_rel * max(1, |lambda|)` are merged.
    pub cluster_rel: f64,
    /// Multiple of `sqrt(EPS) * ||M||_2` below which eigenvalues are also merged;
    /// a defective eigenvalue of index two splits by about this much under rounding.
    pub jordan_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank_factor: 64.0, cluster_rel: 1e-8, jordan_floor: 16.0 }
    }
}

impl Tolerances {
    pub fn rank_tol(&self, norm: f64) -> f64 {
        self.rank_factor * EPS * norm
    }
}

/// Outcome of a rank decision from a list of singular values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub tol: f64,
    /// The first singular value inside the band `(tol/10, 10 tol]`, if any.
    pub ambiguous: Option<f64>,
}

impl RankInfo {
    pub fn from_singular_values(s: &[f64], tol: f64) -> Self {
        let rank = s.iter().filter(|&&x| x > tol).count();
        let ambiguous = s.iter().copied().find(|&x| x > tol / 10.0 && x <= tol * 10.0);
        RankInfo { rank, tol, ambiguous }
    }

    pub fn strict(self) -> Result<usize> {
        match self.ambiguous {
            Some(sv) => Err(Error::AmbiguousRank { sv, tol: self.tol }),
            None => Ok(self.rank),
        }
    }
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(m: usize, n: usize) -> CMat {
    CMat::zeros(m, n)
}

/// Full SVD `a = u diag(s) v^H` with square `u` (m x m) and `v` (n x n), `s` descending.
pub fn svd_full(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (eye(m), Vec::new(), eye(n));
    }
    let k = m.max(n);
    let padded = if m == n {
        a.clone()
    } else {
        let mut p = zeros(k, k);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    };
    let (u, s, v) = checked_svd(&padded);
    let s: Vec<f64> = s.into_iter().take(m.min(n)).collect();
    // The padded factorization carries the genuine singular vectors first.
    let u = if m == k { u } else { u.view((0, 0), (m, k)).columns(0, m).into_owned() };
    let v = if n == k { v } else { v.view((0, 0), (n, k)).columns(0, n).into_owned() };
    (fix_unitary(u), s, fix_unitary(v))
}

/// Re-orthonormalize a nearly unitary square matrix (padding can leave
/// the trailing columns of a truncated factor only approximately orthonormal).
fn fix_unitary(q: CMat) -> CMat {
    let n = q.ncols();
    if n == 0 || q.nrows() != n {
        return q;
    }
    let defect = (q.adjoint() * &q - eye(n)).norm();
    if defect < 1e-10 {
        return q;
    }
    let qr = nalgebra::QR::new(q.clone());
    let (qq, r) = qr.unpack();
    // keep column phases aligned with the input
    let mut out = qq;
    for j in 0..n {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            for i in 0..n {
                out[(i, j)] *= ph;
            }
        }
    }
    out
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let svd = nalgebra::SVD::new(a.clone(), false, false);
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let frob = a.norm_squared();
    let sum: f64 = s.iter().map(|x| x * x).sum();
    if (sum - frob).abs() <= 1e-10 * frob {
        return s;
    }
    svd_full(a).1
}

/// SVD of a square matrix as `(u, s, v)` with `a = u diag(s) v^H`.
///
/// nalgebra's complex SVD occasionally returns a wrong factorization for
/// rank-deficient input, so the result is verified and recomputed from `a^H`
/// or a fixed unitary rotation of `a` when the reconstruction is off.
fn checked_svd(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let n = a.nrows();
    let tol = 1e-11 * a.norm().max(f64::MIN_POSITIVE) * (n as f64).sqrt().max(1.0);
    let attempt = |b: CMat| {
        let svd = nalgebra::SVD::new(b.clone(), true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v requested").adjoint();
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let rec = &u * CMat::from_diagonal(&CVec::from_iterator(n, s.iter().map(|&x| cr(x)))) * v.adjoint();
        let err = (rec - b).norm();
        (u, s, v, err)
    };
    let (u, s, v, err) = attempt(a.clone());
    if err <= tol {
        return (u, s, v);
    }
    let (v2, s2, u2, err2) = attempt(a.adjoint());
    if err2 <= tol {
        return (u2, s2, v2);
    }
    let mut best = if err2 < err { (u2, s2, v2, err2) } else { (u, s, v, err) };
    for stream in 0..4 {
        let mut rng = crate::rng::seeded(0x57d, stream);
        let g1 = crate::rng::complex_matrix(&mut rng, n, n).qr().q();
        let g2 = crate::rng::complex_matrix(&mut rng, n, n).qr().q();
        let (ub, sb, vb, eb) = attempt(&g1 * a * &g2);
        let cand = (g1.adjoint() * ub, sb, &g2 * vb, eb);
        if eb <= tol {
            return (cand.0, cand.1, cand.2);
        }
        if eb < best.3 {
            best = cand;
        }
    }
    (best.0, best.1, best.2)
}

/// Largest singular value, from the Hermitian eigenproblem of the smaller Gram matrix.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let g = if a.nrows() >= a.ncols() { a.adjoint() * a } else { a * a.adjoint() };
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

pub fn min_singular_value(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let s = singular_values(a);
    if a.nrows() < a.ncols() {
        0.0
    } else {
        s.last().copied().unwrap_or(0.0)
    }
}

/// Numerical rank with threshold `tol`.
pub fn rank_info(a: &CMat, tol: f64) -> RankInfo {
    RankInfo::from_singular_values(&singular_values(a), tol)
}

/// Orthonormal basis of the null space of `a`.
pub fn null_space(a: &CMat, tol: f64) -> CMat {
    let n = a.ncols();
    if a.nrows() == 0 {
        return eye(n);
    }
    let (_, s, v) = svd_full(a);
    let r = s.iter().filter(|&&x| x > tol).count();
    v.columns(r, n - r).into_owned()
}

/// Orthonormal basis of the column space of `a`.
pub fn range_basis(a: &CMat, tol: f64) -> CMat {
    let m = a.nrows();
    if a.ncols() == 0 {
        return zeros(m, 0);
    }
    let (u, s, _) = svd_full(a);
    let r = s.iter().filter(|&&x| x > tol).count();
    u.columns(0, r).into_owned()
}

/// Orthonormal basis of the column space with the default relative tolerance.
pub fn orth(a: &CMat, tols: &Tolerances) -> CMat {
    let nrm = spectral_norm(a);
    range_basis(a, tols.rank_tol(nrm.max(1e-300)))
}

pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if a.nrows() == 0 {
        return Ok(b.clone());
    }
    let lu = nalgebra::LU::new(a.clone());
    lu.solve(b).ok_or_else(|| Error::Invalid("singular linear system".into()))
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    solve(a, &eye(a.nrows()))
}

/// Moore-Penrose pseudo-inverse with singular values at or below `tol` dropped.
pub fn pinv(a: &CMat, tol: f64) -> CMat {
    let (m, n) = a.shape();
    let (u, s, v) = svd_full(a);
    let mut out = zeros(n, m);
    for (k, &sk) in s.iter().enumerate() {
        if sk > tol {
            out += (v.column(k) * u.column(k).adjoint()) / cr(sk);
        }
    }
    out
}

/// Frobenius condition number `||a||_F ||a^{-1}||_F`; infinite when singular.
pub fn frobenius_condition(a: &CMat) -> f64 {
    match inverse(a) {
        Ok(inv) => a.norm() * inv.norm(),
        Err(_) => f64::INFINITY,
    }
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut r, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r, c0), b.shape()).copy_from(b);
        r += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Horizontal concatenation.
pub fn hstack(parts: &[&CMat]) -> CMat {
    let rows = parts.first().map(|p| p.nrows()).unwrap_or(0);
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = zeros(rows, cols);
    let mut c0 = 0;
    for p in parts {
        assert_eq!(p.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c0), p.shape()).copy_from(*p);
        c0 += p.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vstack(parts: &[&CMat]) -> CMat {
    let cols = parts.first().map(|p| p.ncols()).unwrap_or(0);
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "vstack column mismatch");
        out.view_mut((r0, 0), p.shape()).copy_from(*p);
        r0 += p.nrows();
    }
    out
}

/// Extreme eigenvalues of the Hermitian pencil `(a, b)` with `b` positive definite.
pub fn hermitian_pencil_extremes(a: &CMat, b: &CMat) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let bh = (b + b.adjoint()) * cr(0.5);
    let chol = nalgebra::Cholesky::new(bh)
        .ok_or_else(|| Error::Invalid("pencil denominator not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&eye(n))
        .ok_or_else(|| Error::Invalid("singular Cholesky factor".into()))?;
    let mut m = &linv * a * linv.adjoint();
    m = (&m + m.adjoint()) * cr(0.5);
    let eig = nalgebra::SymmetricEigen::new(m);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let h = (a + a.adjoint()) * cr(0.5);
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

/// Sort complex numbers by (re, im) for deterministic reporting.
pub fn sort_complex(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
}

/// Column-space distance `||P_X - P_Y||_2` between orthonormal bases.
pub fn subspace_distance(x: &CMat, y: &CMat) -> f64 {
    if x.ncols() != y.ncols() {
        return 1.0;
    }
    let px = x * x.adjoint();
    let py = y * y.adjoint();
    spectral_norm(&(px - py))
}

/// Inner product linear in the first slot: `<a, b> = sum a_i conj(b_i)`.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    b.dotc(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_svd_wide_and_tall() {
        let a = CMat::from_fn(2, 5, |i, j| c((i + 2 * j) as f64, (i * j) as f64 - 1.0));
        let (u, s, v) = svd_full(&a);
        assert_eq!((u.shape(), v.shape(), s.len()), ((2, 2), (5, 5), 2));
        let mut sig = zeros(2, 5);
        for k in 0..2 {
            sig[(k, k)] = cr(s[k]);
        }
        assert!((&u * sig * v.adjoint() - &a).norm() < 1e-12);
        assert!((v.adjoint() * &v - eye(5)).norm() < 1e-12);
        let ns = null_space(&a, 1e-12);
        assert_eq!(ns.ncols(), 3);
        assert!((&a * ns).norm() < 1e-12);

        let t = a.adjoint();
        let (u, s, v) = svd_full(&t);
        assert_eq!((u.shape(), v.shape()), ((5, 5), (2, 2)));
        assert!((u.adjoint() * &u - eye(5)).norm() < 1e-12);
        assert!(s[0] >= s[1]);
    }

    #[test]
    fn rank_one_svd_reconstructs() {
        for seed in 0..300 {
            let mut rng = crate::rng::seeded(seed, 3);
            let n = 2 + (seed as usize) % 7;
            let x = crate::rng::complex_matrix(&mut rng, n, 1);
            let y = crate::rng::complex_matrix(&mut rng, n, 1);
            let a = &x * y.adjoint();
            let (u, s, v) = svd_full(&a);
            let rec = u.column(0) * cr(s[0]) * v.column(0).adjoint();
            assert!((rec - &a).norm() < 1e-12 * a.norm(), "seed {seed}");
            assert!((singular_values(&a)[0] - a.norm()).abs() < 1e-12 * a.norm());
        }
    }

    #[test]
    fn rank_band_flags_borderline() {
        let info = RankInfo::from_singular_values(&[1.0, 3e-14, 1e-20], 1e-14);
        assert_eq!(info.rank, 2);
        assert!(info.ambiguous.is_some());
        assert!(info.strict().is_err());
        let clean = RankInfo::from_singular_values(&[1.0, 1e-3, 1e-20], 1e-14);
        assert_eq!(clean.strict(), Ok(2));
    }

    #[test]
    fn kron_and_blocks() {
        let a = CMat::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(3.0), cr(4.0)]);
        let k = kron(&eye(2), &a);
        assert_eq!(k, block_diag(&[a.clone(), a.clone()]));
    }

    #[test]
    fn pencil_extremes_of_diagonal_pair() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![cr(2.0), cr(9.0)]));
        let b = CMat::from_diagonal(&CVec::from_vec(vec![cr(1.0), cr(3.0)]));
        let (lo, hi) = hermitian_pencil_extremes(&a, &b).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }
}
