//! Discrete Sobolev scales attached to a spectral split, the check and hat
//! norms, duality pairings and cut independence.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    cr, hermitian_pencil_extremes, min_singular_value, singular_values, vstack, BlockDiag, CMat, CVec,
};
use crate::rng::{complex_vector, seeded};
use crate::speccalc::{strip_count, SpectralCut, SpectralSplit};
use crate::subspace::{subspace_rank_tol, Metric, Subspace, WeightKind};

/// `|A_r|^s` as a metric.
pub fn modulus_metric(split: &SpectralSplit, s: f64) -> Result<Arc<Metric>> {
    Ok(Arc::new(Metric::new(s, WeightKind::Modulus, split.modulus_power(s)?.to_dense())))
}

/// `<k>^s` per Fourier mode.
pub fn reference_weight(split: &SpectralSplit, s: f64) -> BlockDiag {
    let op = &split.op;
    let m = op.fiber_dim();
    if split.a_r.blocks().len() == op.modes.len() {
        BlockDiag::from_blocks(
            op.modes.iter().map(|&k| CMat::identity(m, m) * cr(op.base.japanese_bracket(k).powf(s))).collect(),
        )
    } else {
        let d = split.dim();
        let mut w = CMat::zeros(d, d);
        for (i, &k) in op.modes.iter().enumerate() {
            for f in 0..m {
                w[(i * m + f, i * m + f)] = cr(op.base.japanese_bracket(k).powf(s));
            }
        }
        BlockDiag::dense(w)
    }
}

pub fn reference_metric(split: &SpectralSplit, s: f64) -> Arc<Metric> {
    Arc::new(Metric::new(s, WeightKind::Reference, reference_weight(split, s).to_dense()))
}

pub fn sobolev_norm(u: &CVec, metric: &Metric) -> f64 {
    metric.norm(u)
}

/// `(c, C)` with `c ||u||_ref <= ||u||_mod <= C ||u||_ref`, blockwise singular values of `|A_r|^s <k>^-s`.
pub fn weight_equivalence(split: &SpectralSplit, s: f64) -> Result<(f64, f64)> {
    let wm = split.modulus_power(s)?;
    let wr = reference_weight(split, -s);
    let prod = wm.mul(&wr);
    let sv: Vec<f64> = prod.blocks().par_iter().flat_map(|b| singular_values(b)).collect();
    Ok((sv.iter().copied().fold(f64::INFINITY, f64::min), sv.iter().copied().fold(0.0, f64::max)))
}

/// The two weighted pieces of the check norm:
/// `||u||^2 = || |A_r|^{1/2} chi^- u ||^2 + || |A_r|^{-1/2} chi^+ u ||^2`.
#[derive(Clone, Debug)]
pub struct CheckSpaceNorm {
    pub minus_part: BlockDiag,
    pub plus_part: BlockDiag,
    /// True for the hat norm (orders exchanged).
    pub hat: bool,
}

impl CheckSpaceNorm {
    pub fn check(split: &SpectralSplit) -> Result<Self> {
        Ok(CheckSpaceNorm {
            minus_part: split.modulus_power(0.5)?.mul(&split.chi_minus),
            plus_part: split.modulus_power(-0.5)?.mul(&split.chi_plus),
            hat: false,
        })
    }

    /// `||chi^+ u||_{1/2}^2 + ||chi^- u||_{-1/2}^2`.
    pub fn hat(split: &SpectralSplit) -> Result<Self> {
        Ok(CheckSpaceNorm {
            minus_part: split.modulus_power(-0.5)?.mul(&split.chi_minus),
            plus_part: split.modulus_power(0.5)?.mul(&split.chi_plus),
            hat: true,
        })
    }

    /// Hat norm of `A_r` computed as the check norm of `-A_r = (-A)_{-r}`.
    pub fn hat_via_negation(split: &SpectralSplit) -> Result<Self> {
        let neg = split.op.negated();
        let cut = SpectralCut { r: -split.r(), ..split.cut };
        let ns = SpectralSplit::new(&neg, cut, &split.tols)?;
        Self::check(&ns)
    }

    pub fn norm(&self, u: &CVec) -> Result<f64> {
        let a = self.minus_part.apply(u)?;
        let b = self.plus_part.apply(u)?;
        Ok((a.norm_squared() + b.norm_squared()).sqrt())
    }

    /// Blockwise Gram matrices of the norm.
    pub fn gram(&self) -> BlockDiag {
        self.minus_part
            .zip(&self.plus_part, |a, b| a.adjoint() * a + b.adjoint() * b)
    }

    pub fn metric(&self) -> Arc<Metric> {
        let w = vstack(&[&self.minus_part.to_dense(), &self.plus_part.to_dense()]);
        let kind = if self.hat { WeightKind::Hat } else { WeightKind::Check };
        Arc::new(Metric::new(0.0, kind, w))
    }
}

/// `H^s_pm(A_r) = chi^pm(A_r) H^s`, orthonormal in `|A_r|^s`.
pub fn spectral_subspace(split: &SpectralSplit, s: f64, plus: bool) -> Result<Subspace> {
    let metric = modulus_metric(split, s)?;
    Subspace::from_columns(&split.range_basis(plus), metric, &split.tols)
}

#[derive(Clone, Debug, Serialize)]
pub struct CutIndependence {
    pub r: f64,
    pub q: f64,
    pub seed: u64,
    /// `(sample, ||u||_r, ||u||_q, ratio)` rows.
    pub samples: Vec<(usize, f64, f64, f64)>,
    pub sup_ratio: f64,
    pub inf_ratio: f64,
    /// Exact envelope of `||u||_r / ||u||_q` from the generalized eigenvalues of the Grams.
    pub predicted: (f64, f64),
    pub cross_rank: usize,
    pub strip_count: usize,
}

impl CutIndependence {
    pub fn within_prediction(&self, rel: f64) -> bool {
        self.inf_ratio >= self.predicted.0 * (1.0 - rel) && self.sup_ratio <= self.predicted.1 * (1.0 + rel)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,norm_r,norm_q,ratio\n");
        for (i, a, b, r) in &self.samples {
            s.push_str(&format!("{i},{a:.12e},{b:.12e},{r:.12e}\n"));
        }
        s
    }
}

/// Rank of `chi^-(A_r) chi^+(A_q)` blockwise.
pub fn cross_projector_rank(sr: &SpectralSplit, sq: &SpectralSplit) -> Result<usize> {
    let prod = sr.chi_minus.mul(&sq.chi_plus);
    let tols = sr.tols;
    let ranks: Result<Vec<usize>> = prod
        .blocks()
        .par_iter()
        .map(|b| {
            let s = singular_values(b);
            let tol = subspace_rank_tol(1.0, &tols);
            crate::linalg::RankInfo::from_singular_values(&s, tol).strict()
        })
        .collect();
    Ok(ranks?.into_iter().sum())
}

pub fn cut_independence_report(sr: &SpectralSplit, sq: &SpectralSplit, samples: usize, seed: u64) -> Result<CutIndependence> {
    let nr = CheckSpaceNorm::check(sr)?;
    let nq = CheckSpaceNorm::check(sq)?;
    let gr = nr.gram();
    let gq = nq.gram();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (a, b) in gr.blocks().iter().zip(gq.blocks()) {
        let (l, h) = hermitian_pencil_extremes(a, b)?;
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let dim = sr.dim();
    let rows: Result<Vec<(usize, f64, f64, f64)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(seed, i as u64);
            let u = complex_vector(&mut rng, dim);
            let a = nr.norm(&u)?;
            let b = nq.norm(&u)?;
            Ok((i, a, b, a / b))
        })
        .collect();
    let rows = rows?;
    let sup = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let inf = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    Ok(CutIndependence {
        r: sr.r(),
        q: sq.r(),
        seed,
        samples: rows,
        sup_ratio: sup,
        inf_ratio: inf,
        predicted: (lo.max(0.0).sqrt(), hi.sqrt()),
        cross_rank: cross_projector_rank(sr, sq)?,
        strip_count: if sq.r() < sr.r() { strip_count(&sr.eigenvalues, sq.r(), sr.r()) } else { 0 },
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairingCertificate {
    pub s: f64,
    pub plus: bool,
    pub dim: usize,
    pub min_sv: f64,
    pub max_sv: f64,
}

/// Perfect-pairing threshold for the truncated Gram.
pub const PAIRING_THRESHOLD: f64 = 1e-8;

/// L2 pairing between `H^{-s}_pm(A_r^*)` and `H^s_pm(A_r)`.
pub fn duality_pairing(split: &SpectralSplit, split_star: &SpectralSplit, s: f64, plus: bool) -> Result<PairingCertificate> {
    let x = spectral_subspace(split_star, -s, plus)?;
    let y = spectral_subspace(split, s, plus)?;
    let g = x.basis.adjoint() * &y.basis;
    let sv = singular_values(&g);
    let min_sv = if x.dim() != y.dim() { 0.0 } else { sv.iter().copied().fold(f64::INFINITY, f64::min) };
    let cert = PairingCertificate {
        s,
        plus,
        dim: y.dim(),
        min_sv: if y.dim() == 0 { f64::INFINITY } else { min_sv },
        max_sv: sv.iter().copied().fold(0.0, f64::max),
    };
    if cert.min_sv <= PAIRING_THRESHOLD {
        return Err(Error::DegeneratePairing(cert.min_sv));
    }
    Ok(cert)
}

/// `max |<chi(A_r^*) u, v> - <u, chi(A_r) v>|` over random samples.
pub fn adjoint_projector_identity(split: &SpectralSplit, split_star: &SpectralSplit, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = complex_vector(&mut rng, split.dim());
        let v = complex_vector(&mut rng, split.dim());
        for (ps, p) in [(&split_star.chi_plus, &split.chi_plus), (&split_star.chi_minus, &split.chi_minus)] {
            let lhs = v.dotc(&ps.apply(&u)?);
            let rhs = p.apply(&v)?.dotc(&u);
            worst = worst.max((lhs - rhs).norm() / (u.norm() * v.norm()));
        }
    }
    Ok(worst)
}

/// Smallest singular value of the Gram between s-orthonormal bases of the two ranges,
/// used as a sanity check of non-degeneracy when no error is wanted.
pub fn pairing_gram_min_sv(x: &Subspace, y: &Subspace) -> f64 {
    min_singular_value(&(x.basis.adjoint() * &y.basis))
}

/// Equivalence constants of the check norms of two cuts.
pub fn check_norm_equivalence(sr: &SpectralSplit, sq: &SpectralSplit) -> Result<(f64, f64)> {
    let gr = CheckSpaceNorm::check(sr)?.gram();
    let gq = CheckSpaceNorm::check(sq)?.gram();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (a, b) in gr.blocks().iter().zip(gq.blocks()) {
        let (l, h) = hermitian_pencil_extremes(a, b)?;
        lo = lo.min(l);
        hi = hi.max(h);
    }
    Ok((lo.sqrt(), hi.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{build_nondiag, build_tilted_dirac};

    #[test]
    fn eigenvector_norms() {
        let op = build_tilted_dirac(0.0, 4).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        // mode k = 3, second fiber component has eigenvalue 3
        let u = op.mode_vector([3, 0], &CVec::from_vec(vec![cr(0.0), cr(1.0)])).unwrap();
        let m = modulus_metric(&s, 0.5).unwrap();
        assert!((sobolev_norm(&u, &m) - 2.5f64.sqrt()).abs() < 1e-12);
        let chk = CheckSpaceNorm::check(&s).unwrap();
        assert!((chk.norm(&u).unwrap() - 2.5f64.powf(-0.5)).abs() < 1e-12);
        let r = reference_metric(&s, 0.5);
        assert!((sobolev_norm(&u, &r) - 10f64.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn hat_is_check_of_negation() {
        let op = build_nondiag(4).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let h1 = CheckSpaceNorm::hat(&s).unwrap();
        let h2 = CheckSpaceNorm::hat_via_negation(&s).unwrap();
        let mut rng = seeded(9, 0);
        for _ in 0..20 {
            let u = complex_vector(&mut rng, s.dim());
            let (a, b) = (h1.norm(&u).unwrap(), h2.norm(&u).unwrap());
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn subspace_dims() {
        let op = build_nondiag(4).unwrap();
        let s = SpectralSplit::at(&op, -0.5).unwrap();
        assert_eq!(spectral_subspace(&s, 0.5, true).unwrap().dim(), 10);
        let a0 = build_tilted_dirac(0.0, 4).unwrap();
        let s0 = SpectralSplit::at(&a0, 0.5).unwrap();
        assert_eq!(spectral_subspace(&s0, 0.5, true).unwrap().dim(), 8);
    }

    #[test]
    fn cross_rank_is_strip_count() {
        let op = build_tilted_dirac(0.0, 4).unwrap();
        let sq = SpectralSplit::at(&op, 0.5).unwrap();
        let sr = SpectralSplit::at(&op, 1.5).unwrap();
        let rep = cut_independence_report(&sr, &sq, 50, 1).unwrap();
        assert_eq!(rep.cross_rank, 2);
        assert_eq!(rep.strip_count, 2);
        assert!(rep.within_prediction(1e-12));
        let same = cut_independence_report(&sq, &sq, 10, 1).unwrap();
        assert!((same.sup_ratio - 1.0).abs() < 1e-14 && (same.inf_ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pairing_perfect_and_orthogonality() {
        let op = build_nondiag(3).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let ss = SpectralSplit::new(&op.adjoint().unwrap(), s.cut, &s.tols).unwrap();
        let cert = duality_pairing(&s, &ss, 0.5, true).unwrap();
        assert!(cert.min_sv > 1e-3);
        assert!(adjoint_projector_identity(&s, &ss, 5, 2).unwrap() < 1e-12);
        // ran chi^+(A_r^*) is L2-orthogonal to ran chi^-(A_r)
        let x = ss.range_basis(true);
        let y = s.range_basis(false);
        assert!((x.adjoint() * y).norm() < 1e-12);
    }
}
