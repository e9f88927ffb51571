//! Principal symbols of first-order operators.
//!
//! A symbol is `sigma(x, xi) = sum_j xi_j B_j(x) + C(x)`, with each
//! coefficient a finite matrix Fourier series in the boundary variable `x`.
//! No factor of `i` is included: the operator `B d/dx` has symbol `xi B`.
//! When a symbol belongs to an operator on the cylinder, direction 0 is
//! the normal direction `dt` and the remaining ones are tangent to the boundary.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{
    c, cr, inverse, null_space, singular_values, sort_complex, spectral_norm, CMat, SchurForm,
    Tolerances, C64, EPS,
};

/// Fourier mode on the circle (`[k, 0]`) or on the torus (`[k1, k2]`).
pub type ModeIndex = [i64; 2];

/// Matrix-valued trigonometric polynomial `sum_p C_p exp(2 pi i <p, x> / period)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMatrix {
    pub terms: Vec<(ModeIndex, CMat)>,
}

impl FourierMatrix {
    pub fn constant(m: CMat) -> Self {
        FourierMatrix { terms: vec![([0, 0], m)] }
    }

    pub fn zero() -> Self {
        FourierMatrix { terms: Vec::new() }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|(p, _)| *p == [0, 0])
    }

    /// Largest |p_i| over all terms.
    pub fn bandwidth(&self) -> usize {
        self.terms
            .iter()
            .map(|(p, _)| p[0].unsigned_abs().max(p[1].unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Sum of the `p = 0` terms.
    pub fn mean(&self, m: usize) -> CMat {
        let mut out = CMat::zeros(m, m);
        for (p, t) in &self.terms {
            if *p == [0, 0] {
                out += t;
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64], period: f64, m: usize) -> CMat {
        let mut out = CMat::zeros(m, m);
        for (p, t) in &self.terms {
            let phase: f64 = p.iter().zip(x.iter().chain(std::iter::repeat(&0.0))).map(|(pi, xi)| *pi as f64 * xi).sum();
            out += t * C64::from_polar(1.0, 2.0 * PI * phase / period);
        }
        out
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Self {
        FourierMatrix { terms: self.terms.iter().map(|(p, t)| (*p, f(t))).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub name: String,
    pub coeff: FourierMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolField {
    pub fiber_dim: usize,
    /// Dimension of the boundary on which `x` lives.
    pub base_dim: usize,
    /// Period of the coordinates `x` used by the Fourier coefficients.
    pub period: f64,
    pub directions: Vec<Direction>,
    pub zero_order: FourierMatrix,
}

impl SymbolField {
    /// Symbol with `x`-independent coefficients and no order-zero part.
    pub fn constant(base_dim: usize, period: f64, dirs: Vec<(&str, CMat)>) -> Self {
        let fiber_dim = dirs.first().map(|(_, m)| m.nrows()).unwrap_or(0);
        SymbolField {
            fiber_dim,
            base_dim,
            period,
            directions: dirs
                .into_iter()
                .map(|(n, m)| Direction { name: n.to_string(), coeff: FourierMatrix::constant(m) })
                .collect(),
            zero_order: FourierMatrix::zero(),
        }
    }

    pub fn covector_dim(&self) -> usize {
        self.directions.len()
    }

    pub fn is_constant(&self) -> bool {
        self.directions.iter().all(|d| d.coeff.is_constant()) && self.zero_order.is_constant()
    }

    pub fn bandwidth(&self) -> usize {
        self.directions
            .iter()
            .map(|d| d.coeff.bandwidth())
            .chain(std::iter::once(self.zero_order.bandwidth()))
            .max()
            .unwrap_or(0)
    }

    /// Principal part `sum_j xi_j B_j(x)`.
    pub fn principal(&self, x: &[f64], xi: &[f64]) -> CMat {
        let m = self.fiber_dim;
        let mut out = CMat::zeros(m, m);
        for (d, &w) in self.directions.iter().zip(xi) {
            if w != 0.0 {
                out += d.coeff.eval(x, self.period, m) * cr(w);
            }
        }
        out
    }

    /// Principal part plus the order-zero term.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> CMat {
        self.principal(x, xi) + self.zero_order.eval(x, self.period, self.fiber_dim)
    }
}

/// Sample points `(x, xi)` with `|xi| = 1`.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub points: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SampleGrid {
    /// Unit covectors in `dim` dimensions: `{+1, -1}` for one, `count`
    /// equispaced angles for two, a Fibonacci lattice for three.
    pub fn unit_covectors(dim: usize, count: usize) -> Vec<Vec<f64>> {
        match dim {
            1 => vec![vec![1.0], vec![-1.0]],
            2 => (0..count)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / count as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            3 => {
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..count)
                    .map(|k| {
                        let z = 1.0 - (2 * k + 1) as f64 / count as f64;
                        let r = (1.0 - z * z).sqrt();
                        let a = golden * k as f64;
                        vec![r * a.cos(), r * a.sin(), z]
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn new(x_samples: &[Vec<f64>], covector_dim: usize, count: usize) -> Self {
        let xis = Self::unit_covectors(covector_dim, count);
        let points = x_samples
            .iter()
            .flat_map(|x| xis.iter().map(move |xi| (x.clone(), xi.clone())))
            .collect();
        SampleGrid { points }
    }

    /// Default grid: the origin for constant symbols, eight points per
    /// boundary direction otherwise; 64 covectors in dimension two or more.
    pub fn default_for(sym: &SymbolField) -> Self {
        let xs: Vec<Vec<f64>> = if sym.is_constant() {
            vec![vec![0.0; sym.base_dim]]
        } else {
            let pts: Vec<f64> = (0..8).map(|i| sym.period * i as f64 / 8.0).collect();
            match sym.base_dim {
                1 => pts.iter().map(|&p| vec![p]).collect(),
                _ => pts.iter().flat_map(|&a| pts.iter().map(move |&b| vec![a, b])).collect(),
            }
        };
        SampleGrid::new(&xs, sym.covector_dim(), 64)
    }
}

/// `sigma_D(tau)^{-1} sigma_D(xi)` for `xi` tangent to the boundary.
///
/// `tau` is given in the full covector basis of `sigma_d` (normal first).
/// Only `x`-independent `sigma_D(tau)` is supported.
pub fn adapted_symbol(sigma_d: &SymbolField, tau: &[f64], tols: &Tolerances) -> Result<SymbolField> {
    if tau.len() != sigma_d.covector_dim() {
        return Err(Error::DimensionMismatch { expected: sigma_d.covector_dim(), got: tau.len() });
    }
    let m = sigma_d.fiber_dim;
    let mut st = CMat::zeros(m, m);
    for (d, &w) in sigma_d.directions.iter().zip(tau) {
        if w != 0.0 {
            if !d.coeff.is_constant() {
                return Err(Error::PreconditionViolated(
                    "sigma_D(tau) must be independent of x".into(),
                ));
            }
            st += d.coeff.mean(m) * cr(w);
        }
    }
    let s = singular_values(&st);
    let smin = s.last().copied().unwrap_or(0.0);
    if smin <= tols.rank_tol(s.first().copied().unwrap_or(0.0)) || smin == 0.0 {
        return Err(Error::NotElliptic { min_sv: smin, sample: 0 });
    }
    let inv = inverse(&st)?;
    let directions = sigma_d
        .directions
        .iter()
        .skip(1)
        .map(|d| Direction { name: d.name.clone(), coeff: d.coeff.map(|b| &inv * b) })
        .collect();
    Ok(SymbolField {
        fiber_dim: m,
        base_dim: sigma_d.base_dim,
        period: sigma_d.period,
        directions,
        zero_order: FourierMatrix::zero(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticityReport {
    pub elliptic: bool,
    pub min_singular_value: f64,
    pub worst_sample: usize,
    pub worst_condition: f64,
}

/// Smallest singular value of the principal symbol over the grid.
pub fn check_ellipticity(sigma: &SymbolField, grid: &SampleGrid, tols: &Tolerances) -> EllipticityReport {
    let mut rep = EllipticityReport {
        elliptic: !grid.points.is_empty(),
        min_singular_value: f64::INFINITY,
        worst_sample: 0,
        worst_condition: 1.0,
    };
    for (i, (x, xi)) in grid.points.iter().enumerate() {
        let s = singular_values(&sigma.principal(x, xi));
        let (hi, lo) = (s.first().copied().unwrap_or(0.0), s.last().copied().unwrap_or(0.0));
        if lo < rep.min_singular_value {
            rep.min_singular_value = lo;
            rep.worst_sample = i;
        }
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        rep.worst_condition = rep.worst_condition.max(cond);
        if lo <= tols.rank_tol(hi) || lo == 0.0 {
            rep.elliptic = false;
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleEigs {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub eigenvalues: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BisectorReport {
    /// Largest `nu` with no sampled eigenvalue in the open bisector `S_nu`.
    pub nu: f64,
    /// Smallest `|Im lambda|` over the samples.
    pub min_real_gap: f64,
    pub samples: Vec<SampleEigs>,
}

/// Sorted eigenvalues of a square matrix.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    let mut ev = SchurForm::new(m)?.eigenvalues();
    sort_complex(&mut ev);
    Ok(ev)
}

/// Angle between `z` and the real axis, in `[0, pi/2]`.
pub fn angle_to_real_axis(z: C64) -> f64 {
    z.im.abs().atan2(z.re.abs())
}

pub fn bisector_angle(sigma_a: &SymbolField, grid: &SampleGrid) -> Result<BisectorReport> {
    let mut nu = PI / 2.0;
    let mut gap = f64::INFINITY;
    let mut samples = Vec::with_capacity(grid.points.len());
    for (i, (x, xi)) in grid.points.iter().enumerate() {
        let ev = eigenvalues(&sigma_a.principal(x, xi))?;
        for l in &ev {
            if l.im.abs() <= 1e-8 * l.norm().max(1.0) {
                return Err(Error::RealEigenvalueFound { sample: i, re: l.re, im: l.im });
            }
            nu = nu.min(angle_to_real_axis(*l));
            gap = gap.min(l.im.abs());
        }
        samples.push(SampleEigs { x: x.clone(), xi: xi.clone(), eigenvalues: ev });
    }
    Ok(BisectorReport { nu, min_real_gap: gap, samples })
}

/// One eigenvalue cluster with its multiplicities and an orthonormal basis
/// of the generalized eigenspace.
#[derive(Clone, Debug)]
pub struct EigenCluster {
    pub value: C64,
    pub algebraic: usize,
    pub geometric: usize,
    pub basis: CMat,
}

/// Merge threshold for eigenvalues `a`, `b` of a matrix with norm `norm`.
pub fn cluster_threshold(a: C64, b: C64, norm: f64, tols: &Tolerances) -> f64 {
    let rel = tols.cluster_rel * a.norm().max(b.norm()).max(1.0);
    rel.max(tols.jordan_floor * EPS.sqrt() * norm)
}

/// Eigenvalue clusters with algebraic and geometric multiplicities.
pub fn symbol_eig_structure(m: &CMat, tols: &Tolerances) -> Result<Vec<EigenCluster>> {
    let n = m.nrows();
    let schur = SchurForm::new(m)?;
    let ev = schur.eigenvalues();
    let norm = spectral_norm(m);
    let mut id = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if id[i] != usize::MAX {
            continue;
        }
        id[i] = next;
        let mut stack = vec![i];
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if id[q] == usize::MAX && (ev[p] - ev[q]).norm() <= cluster_threshold(ev[p], ev[q], norm, tols) {
                    id[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        for j in 0..n {
            if id[i] != id[j] {
                let d = (ev[i] - ev[j]).norm();
                if d <= 10.0 * cluster_threshold(ev[i], ev[j], norm, tols) {
                    return Err(Error::ClusterAmbiguity(format!("{} and {} at distance {d:e}", ev[i], ev[j])));
                }
            }
        }
    }
    let tol = tols.rank_tol(norm.max(1e-300));
    let mut out = Vec::with_capacity(next);
    for cl in 0..next {
        let members: Vec<usize> = (0..n).filter(|&i| id[i] == cl).collect();
        let alg = members.len();
        let value = members.iter().map(|&i| ev[i]).sum::<C64>() / alg as f64;
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] -= value;
        }
        let geo = null_space(&shifted, tol).ncols().clamp(1, alg);
        let mut s = schur.clone();
        let keys: Vec<usize> = (0..n).map(|i| if id[i] == cl { 0 } else { 1 }).collect();
        s.reorder_by_key(&keys);
        out.push(EigenCluster { value, algebraic: alg, geometric: geo, basis: s.q.columns(0, alg).into_owned() });
    }
    out.sort_by(|a, b| {
        a.value.re.partial_cmp(&b.value.re).unwrap().then(a.value.im.partial_cmp(&b.value.im).unwrap())
    });
    Ok(out)
}

/// Counts of eigenvalues (with algebraic multiplicity) with positive and negative imaginary part.
pub fn imaginary_sign_counts(m: &CMat) -> Result<(usize, usize)> {
    let ev = eigenvalues(m)?;
    Ok((ev.iter().filter(|l| l.im > 0.0).count(), ev.iter().filter(|l| l.im < 0.0).count()))
}

/// `[[2, (l - 1/l) i], [(l - 1/l) i, 2]]`.
pub fn rs_eigen_matrix(l: C64) -> CMat {
    let off = (l - l.inv()) * c(0.0, 1.0);
    CMat::from_row_slice(2, 2, &[cr(2.0), off, off, cr(2.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::I;

    fn nondiag_sigma_d() -> SymbolField {
        let dt = CMat::from_row_slice(2, 2, &[-I, cr(1.0), cr(0.0), -I]);
        SymbolField::constant(1, 2.0 * PI, vec![("dt", dt), ("dx", CMat::identity(2, 2))])
    }

    #[test]
    fn nondiag_adapted_symbol() {
        let tols = Tolerances::default();
        let a = adapted_symbol(&nondiag_sigma_d(), &[1.0, 0.0], &tols).unwrap();
        let expect = CMat::from_row_slice(2, 2, &[I, cr(1.0), cr(0.0), I]);
        assert!((a.principal(&[0.0], &[1.0]) - expect).norm() < 1e-14);
        let cl = symbol_eig_structure(&a.principal(&[0.0], &[1.0]), &tols).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!((cl[0].algebraic, cl[0].geometric), (2, 1));
        assert!((cl[0].value - I).norm() < 1e-12);
    }

    #[test]
    fn ellipticity_of_nondiag_and_zero() {
        let tols = Tolerances::default();
        let s = nondiag_sigma_d();
        let grid = SampleGrid::default_for(&s);
        let rep = check_ellipticity(&s, &grid, &tols);
        assert!(rep.elliptic);
        // det = (xi2 - i xi1)^2 has modulus 1 on the unit circle
        for (x, xi) in &grid.points {
            let m = s.principal(x, xi);
            let det = m.determinant();
            let expect = (c(xi[1], -xi[0])).powi(2);
            assert!((det - expect).norm() < 1e-13);
        }
        let z = SymbolField::constant(1, 2.0 * PI, vec![("dt", CMat::zeros(2, 2)), ("dx", CMat::zeros(2, 2))]);
        assert!(!check_ellipticity(&z, &grid, &tols).elliptic);
    }

    #[test]
    fn identity_symbol_adapts_to_xi() {
        let tols = Tolerances::default();
        let s = SymbolField::constant(1, 2.0 * PI, vec![("dt", CMat::identity(3, 3)), ("dx", CMat::identity(3, 3))]);
        let a = adapted_symbol(&s, &[1.0, 0.0], &tols).unwrap();
        assert!((a.principal(&[0.3], &[-2.0]) - CMat::identity(3, 3) * cr(-2.0)).norm() < 1e-15);
        assert!(matches!(adapted_symbol(&s, &[0.0, 0.0], &tols), Err(Error::NotElliptic { .. })));
    }

    #[test]
    fn diagonal_matrix_structure() {
        let m = CMat::from_diagonal(&crate::linalg::CVec::from_vec(vec![cr(1.0), cr(2.0)]));
        let cl = symbol_eig_structure(&m, &Tolerances::default()).unwrap();
        assert_eq!(cl.len(), 2);
        assert!(cl.iter().all(|c| c.algebraic == 1 && c.geometric == 1));
    }

    #[test]
    fn nondiag_mode_block_jordan() {
        // [[-1, i], [0, -1]]: one eigenvalue -1, one Jordan chain
        let m = CMat::from_row_slice(2, 2, &[cr(-1.0), I, cr(0.0), cr(-1.0)]);
        let cl = symbol_eig_structure(&m, &Tolerances::default()).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!((cl[0].algebraic, cl[0].geometric), (2, 1));
        // brute force: (m + 1)^1 != 0, (m + 1)^2 == 0
        let n = &m + CMat::identity(2, 2);
        assert!(n.norm() > 0.5 && (&n * &n).norm() == 0.0);
    }

    #[test]
    fn bisector_flags_real_eigenvalues() {
        let s = SymbolField::constant(1, 2.0 * PI, vec![("dx", CMat::identity(2, 2))]);
        let grid = SampleGrid::default_for(&s);
        assert!(matches!(bisector_angle(&s, &grid), Err(Error::RealEigenvalueFound { .. })));
    }

    #[test]
    fn rs_eigen_matrix_determinant() {
        for k in 0..20 {
            let l = c(0.3 + 0.17 * k as f64, -1.1 + 0.13 * k as f64);
            let det = rs_eigen_matrix(l).determinant();
            let expect = (l + l.inv()).powi(2);
            assert!((det - expect).norm() <= 1e-12 * expect.norm().max(1.0));
        }
    }
}
