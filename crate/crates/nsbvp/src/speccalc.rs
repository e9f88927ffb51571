//! Spectral cuts, the spectral split of `A_r = A - r` and the holomorphic
//! calculus of the modulus `|A_r| = sgn(A_r) A_r`.
//!
//! The primary path is an ordered Schur decomposition per block. The
//! contour formula along the imaginary axis is an independent check.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::FourierOperator;
use crate::error::{Error, Result};
use crate::linalg::{
    cr, eye, gauss_legendre, inverse, log_grid, min_singular_value, singular_values, sort_complex,
    spectral_norm, sylvester_upper, zeros, BlockDiag, CMat, CVec, ExpNeg, FunctionalCalculus, Power,
    PsiAlpha, ScalarFn, SchurForm, Tolerances, C64,
};
use crate::symbols::{symbol_eig_structure, EigenCluster};

/// Eigenvalues of every block, sorted by `(re, im)`.
pub fn spectrum(op: &FourierOperator) -> Result<Vec<C64>> {
    let per: Result<Vec<Vec<C64>>> =
        op.matrix.blocks().par_iter().map(|b| Ok(SchurForm::new(b)?.eigenvalues())).collect();
    let mut all: Vec<C64> = per?.into_iter().flatten().collect();
    sort_complex(&mut all);
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CutMethod {
    Chosen,
    Auto,
}

/// Admissible cut: no eigenvalue has `|Re lambda - r| < epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralCut {
    pub r: f64,
    pub epsilon: f64,
    pub method: CutMethod,
}

fn hit_tolerance(r: f64) -> f64 {
    1e-8 * r.abs().max(1.0)
}

impl SpectralCut {
    /// Validate a user-chosen `r` against a spectrum.
    pub fn chosen(eigs: &[C64], r: f64) -> Result<Self> {
        let eps = eigs.iter().map(|l| (l.re - r).abs()).fold(f64::INFINITY, f64::min);
        if eps <= hit_tolerance(r) {
            return Err(Error::CutHitsSpectrum { r, distance: eps });
        }
        Ok(SpectralCut { r, epsilon: eps, method: CutMethod::Chosen })
    }

    pub fn for_operator(op: &FourierOperator, r: f64) -> Result<Self> {
        Self::chosen(&spectrum(op)?, r)
    }
}

/// Distinct real parts, merged within the cut tolerance.
fn distinct_real_parts(eigs: &[C64]) -> Vec<f64> {
    let mut re: Vec<f64> = eigs.iter().map(|l| l.re).collect();
    re.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::new();
    for x in re {
        match out.last() {
            Some(&y) if (x - y).abs() <= hit_tolerance(x) => {}
            _ => out.push(x),
        }
    }
    out
}

/// Gap midpoints between consecutive distinct real parts inside `window`.
pub fn find_cuts_in(eigs: &[C64], window: (f64, f64)) -> Result<Vec<SpectralCut>> {
    let re = distinct_real_parts(eigs);
    let cuts: Vec<SpectralCut> = re
        .windows(2)
        .filter_map(|w| {
            let r = 0.5 * (w[0] + w[1]);
            (r > window.0 && r < window.1).then_some(SpectralCut {
                r,
                epsilon: 0.5 * (w[1] - w[0]),
                method: CutMethod::Auto,
            })
        })
        .collect();
    if cuts.is_empty() {
        return Err(Error::NoGapInWindow { lo: window.0, hi: window.1 });
    }
    Ok(cuts)
}

pub fn find_cuts(op: &FourierOperator, window: (f64, f64)) -> Result<Vec<SpectralCut>> {
    find_cuts_in(&spectrum(op)?, window)
}

/// Number of eigenvalues (with algebraic multiplicity) with `Re` strictly between the cuts.
pub fn strip_count(eigs: &[C64], lo: f64, hi: f64) -> usize {
    let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    eigs.iter().filter(|l| l.re > a && l.re < b).count()
}

/// Envelope `spec(A) in closed S_omega union B_R`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Envelope {
    pub radius: f64,
    pub omega: f64,
}

fn angle_from_real_axis(z: C64) -> f64 {
    z.im.abs().atan2(z.re.abs())
}

/// Per-block pieces of the split in Schur coordinates.
#[derive(Clone, Debug)]
struct BlockSplit {
    q: CMat,
    t: CMat,
    k: usize,
    y: CMat,
}

impl BlockSplit {
    fn new(a_r: &CMat) -> Result<Self> {
        let n = a_r.nrows();
        let mut s = SchurForm::new(a_r)?;
        let keys: Vec<usize> = s.eigenvalues().iter().map(|l| if l.re > 0.0 { 0 } else { 1 }).collect();
        let k = keys.iter().filter(|&&x| x == 0).count();
        s.reorder_by_key(&keys);
        let y = if k == 0 || k == n {
            zeros(k, n - k)
        } else {
            let t11 = s.t.view((0, 0), (k, k)).into_owned();
            let t22 = s.t.view((k, k), (n - k, n - k)).into_owned();
            let t12 = s.t.view((0, k), (k, n - k)).into_owned();
            sylvester_upper(&t11, &t22, &t12)?
        };
        Ok(BlockSplit { q: s.q, t: s.t, k, y })
    }

    fn core(&self, plus: C64, minus: C64, off: C64) -> CMat {
        let n = self.t.nrows();
        let k = self.k;
        let mut m = zeros(n, n);
        m.view_mut((0, 0), (k, k)).copy_from(&(eye(k) * plus));
        m.view_mut((k, k), (n - k, n - k)).copy_from(&(eye(n - k) * minus));
        m.view_mut((0, k), (k, n - k)).copy_from(&(&self.y * off));
        m
    }

    fn conj(&self, core: &CMat) -> CMat {
        &self.q * core * self.q.adjoint()
    }

    /// Schur form of `|A_r|`: `[[T11, T12 + 2 Y T22], [0, -T22]]` in the same basis.
    fn modulus_schur(&self) -> SchurForm {
        let s = self.core(cr(1.0), cr(-1.0), cr(2.0));
        SchurForm { q: self.q.clone(), t: s * &self.t }
    }
}

/// Projectors, sign and modulus of `A_r` for an admissible cut.
#[derive(Clone, Debug)]
pub struct SpectralSplit {
    pub op: FourierOperator,
    pub cut: SpectralCut,
    pub a_r: BlockDiag,
    pub chi_plus: BlockDiag,
    pub chi_minus: BlockDiag,
    pub sgn: BlockDiag,
    pub modulus: BlockDiag,
    /// Eigenvalues of `A`, sorted.
    pub eigenvalues: Vec<C64>,
    /// Largest angle between an eigenvalue of `A_r` and the real axis.
    pub omega_r: f64,
    pub envelope: Envelope,
    pub rank_plus: usize,
    /// `c ||A_r u|| <= || |A_r| u || <= C ||A_r u||` as `(c, C)`.
    pub equivalence: (f64, f64),
    pub tols: Tolerances,
    calc: Vec<FunctionalCalculus>,
}

impl SpectralSplit {
    pub fn new(op: &FourierOperator, cut: SpectralCut, tols: &Tolerances) -> Result<Self> {
        let eigenvalues = spectrum(op)?;
        let checked = SpectralCut::chosen(&eigenvalues, cut.r)?;
        let cut = SpectralCut { epsilon: checked.epsilon, ..cut };
        let a_r = op.matrix.shift(cut.r);
        let parts: Result<Vec<(BlockSplit, FunctionalCalculus)>> = a_r
            .blocks()
            .par_iter()
            .map(|b| {
                let bs = BlockSplit::new(b)?;
                let calc = FunctionalCalculus::from_schur(bs.modulus_schur(), tols)?;
                Ok((bs, calc))
            })
            .collect();
        let parts = parts?;
        let mk = |f: &(dyn Fn(&BlockSplit) -> CMat + Sync)| -> BlockDiag {
            BlockDiag::from_blocks(parts.par_iter().map(|(b, _)| f(b)).collect())
        };
        let chi_plus = mk(&|b| b.conj(&b.core(cr(1.0), cr(0.0), cr(1.0))));
        let chi_minus = mk(&|b| b.conj(&b.core(cr(0.0), cr(1.0), cr(-1.0))));
        let sgn = mk(&|b| b.conj(&b.core(cr(1.0), cr(-1.0), cr(2.0))));
        let modulus = sgn.mul(&a_r);
        let rank_plus = parts.iter().map(|(b, _)| b.k).sum();
        let omega_r = eigenvalues
            .iter()
            .map(|l| angle_from_real_axis(l - cr(cut.r)))
            .fold(0.0, f64::max);
        let radius = 1.0 + cut.r.abs();
        let omega = eigenvalues
            .iter()
            .filter(|l| l.norm() > radius)
            .map(|&l| angle_from_real_axis(l))
            .fold(0.0, f64::max);
        let sv: Vec<f64> = sgn.blocks().iter().flat_map(|b| singular_values(b)).collect();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let calc = parts.into_iter().map(|(_, c)| c).collect();
        Ok(SpectralSplit {
            op: op.clone(),
            cut,
            a_r,
            chi_plus,
            chi_minus,
            sgn,
            modulus,
            eigenvalues,
            omega_r,
            envelope: Envelope { radius, omega },
            rank_plus,
            equivalence: (1.0 / smax, 1.0 / smin),
            tols: *tols,
            calc,
        })
    }

    pub fn at(op: &FourierOperator, r: f64) -> Result<Self> {
        let cut = SpectralCut::for_operator(op, r)?;
        Self::new(op, cut, &Tolerances::default())
    }

    pub fn dim(&self) -> usize {
        self.a_r.dim()
    }

    pub fn r(&self) -> f64 {
        self.cut.r
    }

    /// `f(|A_r|)` blockwise.
    pub fn eval(&self, f: &dyn ScalarFn) -> Result<BlockDiag> {
        let blocks: Result<Vec<CMat>> = self.calc.par_iter().map(|c| c.eval(f)).collect();
        Ok(BlockDiag::from_blocks(blocks?))
    }

    /// Eigenvalues of `|A_r|`, unsorted, block by block.
    pub fn modulus_eigenvalues(&self) -> Vec<C64> {
        self.calc.iter().flat_map(|c| c.eigenvalues()).collect()
    }

    pub fn modulus_power(&self, s: f64) -> Result<BlockDiag> {
        let m = self.modulus_eigenvalues().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if m == 0.0 || !m.is_finite() && self.dim() > 0 {
            return Err(Error::SingularModulus);
        }
        if s == 0.0 {
            return Ok(self.modulus.identity_like());
        }
        if s == 1.0 {
            return Ok(self.modulus.clone());
        }
        self.eval(&Power(s))
    }

    /// `exp(-t |A_r|)`.
    pub fn semigroup(&self, t: f64) -> Result<BlockDiag> {
        if t == 0.0 {
            return Ok(self.modulus.identity_like());
        }
        self.eval(&ExpNeg::real(t))
    }

    /// `exp(-zeta |A_r|)` for complex `zeta`.
    pub fn semigroup_complex(&self, zeta: C64) -> Result<BlockDiag> {
        self.eval(&ExpNeg(zeta))
    }

    /// Eigen-clusters of `A_r`, block by block.
    pub fn eigendata(&self) -> Result<Vec<EigenCluster>> {
        let per: Result<Vec<Vec<EigenCluster>>> =
            self.a_r.blocks().par_iter().map(|b| symbol_eig_structure(b, &self.tols)).collect();
        Ok(per?.into_iter().flatten().collect())
    }

    /// Largest of the projector identity residuals.
    pub fn identity_residuals(&self) -> SplitResiduals {
        let mut r = SplitResiduals::default();
        for (((p, m), s), a) in self
            .chi_plus
            .blocks()
            .iter()
            .zip(self.chi_minus.blocks())
            .zip(self.sgn.blocks())
            .zip(self.a_r.blocks())
        {
            let n = p.nrows();
            let scale = a.norm().max(1.0);
            r.idempotence = r.idempotence.max((p * p - p).norm()).max((m * m - m).norm());
            r.complement = r.complement.max((p + m - eye(n)).norm());
            r.commutation = r.commutation.max((p * a - a * p).norm() / scale);
            r.sign_square = r.sign_square.max((s * s - eye(n)).norm());
        }
        for ((md, a), s) in self.modulus.blocks().iter().zip(self.a_r.blocks()).zip(self.sgn.blocks()) {
            let scale = (a * a).norm().max(1.0);
            r.modulus_square = r.modulus_square.max((md * md - a * a).norm() / scale);
            r.sign_commutation = r.sign_commutation.max((s * a - a * s).norm() / a.norm().max(1.0));
        }
        r
    }

    /// Dense global matrix whose columns are block-local vectors.
    pub fn assemble_columns(&self, parts: &[CMat]) -> CMat {
        let offs = self.a_r.offsets();
        let total: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = zeros(self.dim(), total);
        let mut col = 0;
        for (b, p) in parts.iter().enumerate() {
            out.view_mut((offs[b], col), p.shape()).copy_from(p);
            col += p.ncols();
        }
        out
    }

    /// Orthonormal (L2) basis of `ran chi^+(A_r)` or `ran chi^-(A_r)`.
    pub fn range_basis(&self, plus: bool) -> CMat {
        let proj = if plus { &self.chi_plus } else { &self.chi_minus };
        let parts: Vec<CMat> = proj.blocks().par_iter().map(|p| crate::linalg::orth(p, &self.tols)).collect();
        self.assemble_columns(&parts)
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SplitResiduals {
    pub idempotence: f64,
    pub complement: f64,
    pub commutation: f64,
    pub sign_square: f64,
    pub modulus_square: f64,
    pub sign_commutation: f64,
}

impl SplitResiduals {
    pub fn max(&self) -> f64 {
        [
            self.idempotence,
            self.complement,
            self.commutation,
            self.sign_square,
            self.modulus_square,
            self.sign_commutation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Quadrature for the imaginary-axis contour formula
/// `chi^+ = 1/2 + (1/pi) int_0^H A (A^2 + y^2)^{-1} dy + tail(H)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContourQuad {
    /// Truncation height; raised to `4 ||A_r||` when smaller.
    pub height: f64,
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Upper bound on the number of panels across the spectral band.
    pub max_band_panels: usize,
    /// Geometric growth factor of panel edges beyond the spectral band.
    pub far_ratio: f64,
    /// Frobenius condition bound for `A^2 + y^2`.
    pub max_condition: f64,
}

impl Default for ContourQuad {
    fn default() -> Self {
        ContourQuad { height: 1e3, order: 16, max_band_panels: 2000, far_ratio: 1.25, max_condition: 1e12 }
    }
}

#[derive(Clone, Debug)]
pub struct ContourResult {
    pub projector: BlockDiag,
    /// Largest difference from the half-order rule on the same panels.
    pub error_estimate: f64,
    pub nodes: usize,
    pub height: f64,
}

/// Panel edges on `[0, h]`, graded towards 0, uniform (length `eps`) across
/// `[0, y_star]`, geometric beyond.
pub fn contour_panels(eps: f64, y_star: f64, h: f64, quad: &ContourQuad) -> Vec<f64> {
    let mut edges = vec![0.0];
    let mut len = eps.min(1.0) / 8.0;
    let mut y = len;
    edges.push(y);
    while len < eps && y < h {
        len = (2.0 * len).min(eps);
        y += len;
        edges.push(y);
    }
    let band_len = eps.max((y_star - y) / quad.max_band_panels as f64);
    while y < y_star && y < h {
        y += band_len;
        edges.push(y);
    }
    while y < h {
        y = (y * quad.far_ratio).max(y + band_len);
        edges.push(y.min(h));
    }
    *edges.last_mut().unwrap() = h;
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    edges
}

fn contour_block(a: &CMat, quad: &ContourQuad) -> Result<(CMat, f64, usize, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((zeros(0, 0), 0.0, 0, quad.height));
    }
    let ev = SchurForm::new(a)?.eigenvalues();
    let eps = ev.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    let ymax = ev.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    let anorm = spectral_norm(a);
    let h = quad.height.max(4.0 * anorm);
    let edges = contour_panels(eps, 1.5 * ymax + 1.0, h, quad);
    let a2 = a * a;
    let (xf, wf) = gauss_legendre(quad.order);
    let (xh, wh) = gauss_legendre(quad.order / 2);
    let integrand = |y: f64| -> Result<CMat> {
        let mut m = a2.clone();
        for i in 0..n {
            m[(i, i)] += cr(y * y);
        }
        let inv = inverse(&m)?;
        let cond = m.norm() * inv.norm();
        if cond > quad.max_condition {
            return Err(Error::ResolventIllConditioned { y, cond });
        }
        Ok(inv * a)
    };
    let mut full = zeros(n, n);
    let mut half = zeros(n, n);
    let mut nodes = 0;
    for e in edges.windows(2) {
        let (lo, hi) = (e[0], e[1]);
        let mid = 0.5 * (lo + hi);
        let rad = 0.5 * (hi - lo);
        for (x, w) in xf.iter().zip(&wf) {
            full += integrand(mid + rad * x)? * cr(rad * w);
        }
        for (x, w) in xh.iter().zip(&wh) {
            half += integrand(mid + rad * x)? * cr(rad * w);
        }
        nodes += quad.order;
    }
    // int_H^inf A (A^2 + y^2)^{-1} dy = sum_n (-1)^n A^{2n+1} / ((2n+1) H^{2n+1})
    let mut tail = zeros(n, n);
    let mut pow = a / cr(h);
    let ratio2 = &a2 / cr(h * h);
    for j in 0..200 {
        let term = &pow * cr(if j % 2 == 0 { 1.0 } else { -1.0 } / (2 * j + 1) as f64);
        let tn = term.norm();
        tail += term;
        if tn < 1e-18 * (1.0 + tail.norm()) {
            break;
        }
        pow = &pow * &ratio2;
    }
    let proj = eye(n) * cr(0.5) + (&full + &tail) * cr(1.0 / PI);
    let err = (&full - &half).norm() / PI;
    Ok((proj, err, nodes, h))
}

/// `chi^+(A_r)` from the contour formula, block by block.
pub fn spectral_split_contour(op: &FourierOperator, cut: &SpectralCut, quad: &ContourQuad) -> Result<ContourResult> {
    let a_r = op.matrix.shift(cut.r);
    let per: Result<Vec<(CMat, f64, usize, f64)>> =
        a_r.blocks().par_iter().map(|b| contour_block(b, quad)).collect();
    let per = per?;
    let error_estimate = per.iter().map(|p| p.1).fold(0.0, f64::max);
    let nodes = per.iter().map(|p| p.2).max().unwrap_or(0);
    let height = per.iter().map(|p| p.3).fold(0.0, f64::max);
    Ok(ContourResult {
        projector: BlockDiag::from_blocks(per.into_iter().map(|p| p.0).collect()),
        error_estimate,
        nodes,
        height,
    })
}

/// A holomorphic function on a sector with `|psi(z)| <= C min(|z|^a, |z|^-a)`.
pub struct Psi<'a> {
    pub f: &'a dyn ScalarFn,
    pub decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiMethod {
    Eigen,
    Contour,
}

#[derive(Clone, Debug)]
pub struct PsiResult {
    pub value: BlockDiag,
    pub error_estimate: f64,
    pub theta: Option<f64>,
}

/// `psi(|A_r|)` by the Schur calculus or by the sector-boundary contour.
pub fn psi_calculus(split: &SpectralSplit, psi: &Psi, method: PsiMethod) -> Result<PsiResult> {
    match method {
        PsiMethod::Eigen => Ok(PsiResult { value: split.eval(psi.f)?, error_estimate: 0.0, theta: None }),
        PsiMethod::Contour => psi_contour(split, psi),
    }
}

fn psi_contour(split: &SpectralSplit, psi: &Psi) -> Result<PsiResult> {
    let ev = split.modulus_eigenvalues();
    if ev.is_empty() {
        return Ok(PsiResult { value: split.modulus.clone(), error_estimate: 0.0, theta: None });
    }
    let omega = ev.iter().map(|z| z.im.atan2(z.re).abs()).fold(0.0, f64::max);
    let theta = 0.5 * (omega + 0.5 * PI);
    if theta - omega < 1e-3 {
        return Err(Error::SectorTooNarrow { theta, omega });
    }
    let lmin = ev.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let lmax = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let a = psi.decay.max(0.1);
    let s_lo = lmin * 1e-16f64.powf(1.0 / a);
    let s_hi = (lmax * 1e16f64.powf(1.0 / a)).min(1e300);
    let h = 0.05;
    let steps = ((s_hi.ln() - s_lo.ln()) / h).ceil() as usize;
    let xs: Vec<f64> = (0..=steps).map(|j| s_lo.ln() + h * j as f64).collect();
    let dn = C64::from_polar(1.0, -theta);
    let up = C64::from_polar(1.0, theta);
    let blocks: Result<Vec<(CMat, f64)>> = split
        .modulus
        .blocks()
        .par_iter()
        .map(|t| {
            let n = t.nrows();
            let mut full = zeros(n, n);
            let mut coarse = zeros(n, n);
            for (j, &x) in xs.iter().enumerate() {
                let s = x.exp();
                let mut term = zeros(n, n);
                for (dir, sign) in [(dn, 1.0), (up, -1.0)] {
                    let z = dir * s;
                    let mut m = -t.clone();
                    for i in 0..n {
                        m[(i, i)] += z;
                    }
                    term += inverse(&m)? * (psi.f.eval(z) * dir * s * sign);
                }
                let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
                full += &term * cr(w * h);
                if j % 2 == 0 {
                    let wc = if j == 0 || j + 2 > steps { 0.5 } else { 1.0 };
                    coarse += term * cr(wc * 2.0 * h);
                }
            }
            let scale = C64::new(0.0, 2.0 * PI).inv();
            let err = (&full - &coarse).norm() / (2.0 * PI);
            Ok((full * scale, err))
        })
        .collect();
    let blocks = blocks?;
    let err = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    Ok(PsiResult {
        value: BlockDiag::from_blocks(blocks.into_iter().map(|b| b.0).collect()),
        error_estimate: err,
        theta: Some(theta),
    })
}

/// Log grid for the square-function integral.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl TGrid {
    /// Spans `1e-4 / max|spec|` to `30 / min|spec|` with 400 points.
    pub fn default_for(split: &SpectralSplit) -> Self {
        let ev = split.modulus_eigenvalues();
        let lmin = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let lmax = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
        TGrid { t_min: 1e-4 / lmax, t_max: 30.0 / lmin, points: 400 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadraticEstimate {
    pub alpha: f64,
    pub grid: TGrid,
    /// `int_0^inf || psi(t |A_r|) u ||^2 dt / t` per sample.
    pub values: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Closed-form value when `|A_r|` is normal and `2 alpha` is an integer.
    pub analytic: Option<Vec<f64>>,
    /// Extreme eigenvalues of the square-function Gram: every ratio lies in this bracket.
    pub bracket: (f64, f64),
    pub truncation_estimate: f64,
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Square-function estimate for `psi(z) = c z^alpha exp(-z)`.
pub fn quadratic_estimate(
    split: &SpectralSplit,
    us: &[CVec],
    alpha: f64,
    scale: C64,
    grid: Option<TGrid>,
) -> Result<QuadraticEstimate> {
    let grid = grid.unwrap_or_else(|| TGrid::default_for(split));
    let (ts, ws) = log_grid(grid.t_min, grid.t_max, grid.points);
    let c2 = scale.norm_sqr();
    // per block: Gram in Schur coordinates and the endpoint integrands
    let per: Result<Vec<(CMat, CMat, CMat)>> = split
        .calc
        .par_iter()
        .map(|calc| {
            let n = calc.dim();
            let mut g = zeros(n, n);
            let mut first = zeros(n, n);
            let mut last = zeros(n, n);
            for (j, (&t, &w)) in ts.iter().zip(&ws).enumerate() {
                let p = calc.eval_triangular(&PsiAlpha { alpha, t })?;
                let pp = p.adjoint() * &p;
                if j == 0 {
                    first = pp.clone();
                }
                if j + 1 == ts.len() {
                    last = pp.clone();
                }
                g += pp * cr(w);
            }
            Ok((g * cr(c2), first * cr(c2), last * cr(c2)))
        })
        .collect();
    let per = per?;
    let offs = split.modulus.offsets();
    let mut bracket = (f64::INFINITY, 0.0f64);
    for (g, _, _) in &per {
        let h = crate::linalg::hermitian_eigenvalues(g);
        if let (Some(lo), Some(hi)) = (h.first(), h.last()) {
            bracket.0 = bracket.0.min(*lo);
            bracket.1 = bracket.1.max(*hi);
        }
    }
    let normal = split
        .calc
        .iter()
        .all(|c| (0..c.dim()).all(|j| (0..j).all(|i| c.schur.t[(i, j)].norm() <= 1e-12 * c.schur.t.norm())));
    let two_a = 2.0 * alpha;
    let closed = normal && (two_a - two_a.round()).abs() < 1e-12 && two_a >= 1.0;
    let mut values = Vec::with_capacity(us.len());
    let mut ratios = Vec::with_capacity(us.len());
    let mut analytic = closed.then(Vec::new);
    let mut trunc = 0.0f64;
    for u in us {
        let mut val = 0.0;
        let mut ana = 0.0;
        let mut ends = 0.0;
        for (b, (calc, (g, first, last))) in split.calc.iter().zip(&per).enumerate() {
            let ub = u.rows(offs[b], offs[b + 1] - offs[b]);
            let v = calc.schur.q.adjoint() * ub;
            val += (v.adjoint() * g * &v)[(0, 0)].re;
            ends += (v.adjoint() * first * &v)[(0, 0)].re / two_a + (v.adjoint() * last * &v)[(0, 0)].re;
            if closed {
                for i in 0..calc.dim() {
                    let mu = calc.schur.t[(i, i)];
                    let f = mu.norm().powf(two_a) * factorial(two_a.round() as u64 - 1)
                        / (2.0 * mu.re).powf(two_a);
                    ana += v[i].norm_sqr() * f * c2;
                }
            }
        }
        let nu = u.norm_squared();
        values.push(val);
        ratios.push(val / nu);
        trunc = trunc.max(ends / val.max(1e-300));
        if let Some(a) = analytic.as_mut() {
            a.push(ana);
        }
    }
    if trunc > 1e-6 {
        return Err(Error::GridTooCoarse(trunc));
    }
    Ok(QuadraticEstimate { alpha, grid, values, ratios, analytic, bracket, truncation_estimate: trunc })
}

#[derive(Clone, Debug, Serialize)]
pub struct AdjointConsistency {
    pub chi_plus_deviation: f64,
    pub chi_minus_deviation: f64,
    pub sgn_deviation: f64,
    pub modulus_deviation: f64,
    /// Smallest singular value of `chi^+(A_r^*)` restricted to `ran chi^+(A_r)` (and likewise for `-`).
    pub restriction_min_sv: (f64, f64),
}

impl AdjointConsistency {
    pub fn max_deviation(&self) -> f64 {
        self.chi_plus_deviation.max(self.chi_minus_deviation).max(self.sgn_deviation).max(self.modulus_deviation)
    }
}

fn max_block_diff(a: &BlockDiag, b: &BlockDiag) -> f64 {
    a.sub(b).blocks().iter().map(spectral_norm).fold(0.0, f64::max)
}

/// Compare `chi^pm(A_r)^*` with `chi^pm(A_r^*)` and `|A_r|^*` with `|A_r^*|`.
pub fn adjoint_split_consistency(split: &SpectralSplit, tol: f64) -> Result<(AdjointConsistency, SpectralSplit)> {
    let star = split.op.adjoint()?;
    let ss = SpectralSplit::new(&star, split.cut, &split.tols)?;
    let scale = split.modulus.norm2().max(1.0);
    let restriction = |plus: bool| -> f64 {
        let p_star = if plus { &ss.chi_plus } else { &ss.chi_minus };
        let p = if plus { &split.chi_plus } else { &split.chi_minus };
        p.blocks()
            .iter()
            .zip(p_star.blocks())
            .filter_map(|(p, ps)| {
                let basis = crate::linalg::orth(p, &split.tols);
                if basis.ncols() == 0 {
                    return None;
                }
                let target = crate::linalg::orth(ps, &split.tols);
                Some(min_singular_value(&(target.adjoint() * ps * basis)))
            })
            .fold(f64::INFINITY, f64::min)
    };
    let rep = AdjointConsistency {
        chi_plus_deviation: max_block_diff(&split.chi_plus.adjoint(), &ss.chi_plus),
        chi_minus_deviation: max_block_diff(&split.chi_minus.adjoint(), &ss.chi_minus),
        sgn_deviation: max_block_diff(&split.sgn.adjoint(), &ss.sgn),
        modulus_deviation: max_block_diff(&split.modulus.adjoint(), &ss.modulus) / scale,
        restriction_min_sv: (restriction(true), restriction(false)),
    };
    if rep.max_deviation() > tol {
        return Err(Error::ConsistencyFailure(rep.max_deviation()));
    }
    Ok((rep, ss))
}

/// `sup |zeta| ||(zeta - A_r)^{-1}||` over rays at angles `+-mu` and `pi -+ mu`.
pub fn resolvent_bound(split: &SpectralSplit, mu: f64, samples: usize) -> Result<f64> {
    let ev = &split.eigenvalues;
    let lmax = ev.iter().map(|l| (l - cr(split.r())).norm()).fold(1.0, f64::max);
    let (ss, _) = log_grid(1e-3, 1e3 * lmax, samples.max(2));
    let dirs = [mu, -mu, PI - mu, PI + mu];
    let vals: Vec<f64> = split
        .a_r
        .blocks()
        .par_iter()
        .map(|a| {
            let n = a.nrows();
            let mut best = 0.0f64;
            for &s in &ss {
                for &d in &dirs {
                    let z = C64::from_polar(s, d);
                    let mut m = -a.clone();
                    for i in 0..n {
                        m[(i, i)] += z;
                    }
                    let smin = min_singular_value(&m);
                    best = best.max(s / smin);
                }
            }
            best
        })
        .collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// `sup ||exp(-zeta |A_r|)||` over `zeta = s e^{i phi}`, `|phi| <= phi_max`.
pub fn semigroup_bound(split: &SpectralSplit, phi_max: f64, samples: usize) -> Result<f64> {
    let ev = split.modulus_eigenvalues();
    let lmin = ev.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min).max(1e-12);
    let (ss, _) = log_grid(1e-4 / lmin, 40.0 / lmin, samples.max(2));
    let mut best = 1.0f64;
    for &s in &ss {
        for phi in [-phi_max, 0.0, phi_max] {
            let e = split.semigroup_complex(C64::from_polar(s, phi))?;
            best = best.max(e.norm2());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Base;
    use crate::examples::{build_nondiag, build_tilted_dirac};
    use crate::linalg::c;

    fn scalar_op(l: C64) -> FourierOperator {
        let mut op = build_tilted_dirac(0.0, 0).unwrap();
        op.matrix = BlockDiag::dense(CMat::from_element(1, 1, l));
        op.modes = vec![[0, 0]];
        op.base = Base::circle();
        op
    }

    #[test]
    fn cuts_of_a0_are_half_integers() {
        let op = build_tilted_dirac(0.0, 3).unwrap();
        let cuts = find_cuts(&op, (-10.0, 10.0)).unwrap();
        assert_eq!(cuts.len(), 6);
        for c in &cuts {
            assert!((c.r - c.r.floor() - 0.5).abs() < 1e-14 && (c.epsilon - 0.5).abs() < 1e-14);
        }
        assert!(matches!(find_cuts(&op, (0.1, 0.2)), Err(Error::NoGapInWindow { .. })));
    }

    #[test]
    fn cut_hits_spectrum() {
        let op = build_tilted_dirac(0.0, 3).unwrap();
        assert!(matches!(SpectralSplit::at(&op, 1.0), Err(Error::CutHitsSpectrum { .. })));
    }

    #[test]
    fn split_identities_a0() {
        let op = build_tilted_dirac(0.0, 4).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        assert_eq!(s.rank_plus, 8);
        assert!(s.identity_residuals().max() < 1e-12);
        // |A_r| has eigenvalues |k - 1/2|
        let mut m: Vec<f64> = s.modulus_eigenvalues().iter().map(|z| z.re).collect();
        m.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((m[0] - 0.5).abs() < 1e-14 && (m.last().unwrap() - 4.5).abs() < 1e-14);
    }

    #[test]
    fn scalar_contour_residue() {
        for (l, expect) in [(c(0.7, 3.0), 1.0), (c(-0.4, -2.0), 0.0)] {
            let op = scalar_op(l);
            let cut = SpectralCut::for_operator(&op, 0.0).unwrap();
            let res = spectral_split_contour(&op, &cut, &ContourQuad::default()).unwrap();
            assert!((res.projector.blocks()[0][(0, 0)] - cr(expect)).norm() < 1e-10);
        }
    }

    #[test]
    fn contour_matches_oracle_on_jordan_blocks() {
        let op = build_nondiag(6).unwrap();
        let s = SpectralSplit::at(&op, -0.5).unwrap();
        assert_eq!(s.rank_plus, 2 * 7);
        let res = spectral_split_contour(&op, &s.cut, &ContourQuad::default()).unwrap();
        assert!(max_block_diff(&res.projector, &s.chi_plus) < 1e-9);
    }

    #[test]
    fn modulus_powers_compose() {
        let op = build_nondiag(3).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let a = s.modulus_power(0.5).unwrap();
        let b = s.modulus_power(-2.0).unwrap();
        let inv = s.modulus.map(|m| inverse(m)).unwrap();
        assert!(max_block_diff(&a.mul(&a).mul(&b), &inv) < 1e-11);
        assert!(max_block_diff(&s.modulus_power(1.0).unwrap(), &s.modulus) < 1e-13);
    }

    #[test]
    fn semigroup_on_jordan_block_matches_exp() {
        let op = build_nondiag(3).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let e = s.semigroup(0.7).unwrap();
        for (blk, m) in e.blocks().iter().zip(s.modulus.blocks()) {
            let oracle = (m * cr(-0.7)).exp();
            assert!((blk - oracle).norm() < 1e-12);
        }
        let law = s.semigroup(0.3).unwrap().mul(&s.semigroup(0.4).unwrap());
        assert!(max_block_diff(&law, &e) < 1e-12);
    }

    #[test]
    fn psi_contour_agrees_with_eigen() {
        let op = build_tilted_dirac(1.0, 3).unwrap();
        let s = SpectralSplit::at(&op, 0.25).unwrap();
        let f = crate::linalg::FnOf { f: |z: C64| z / ((z + 1.0) * (z + 1.0)), radius_frac: 0.5 };
        let psi = Psi { f: &f, decay: 1.0 };
        let e = psi_calculus(&s, &psi, PsiMethod::Eigen).unwrap();
        let ct = psi_calculus(&s, &psi, PsiMethod::Contour).unwrap();
        assert!(max_block_diff(&e.value, &ct.value) < 1e-9);
    }

    #[test]
    fn quadratic_estimate_quarter() {
        let op = build_tilted_dirac(0.0, 4).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let mut rng = crate::rng::seeded(1, 0);
        let us: Vec<CVec> = (0..4).map(|_| crate::rng::complex_vector(&mut rng, s.dim())).collect();
        let q = quadratic_estimate(&s, &us, 1.0, cr(1.0), None).unwrap();
        for ((v, u), a) in q.values.iter().zip(&us).zip(q.analytic.as_ref().unwrap()) {
            assert!((v / u.norm_squared() - 0.25).abs() < 1e-6);
            assert!((v - a).abs() < 1e-6 * a);
        }
    }

    #[test]
    fn adjoint_consistency_nondiag() {
        let op = build_nondiag(4).unwrap();
        let s = SpectralSplit::at(&op, 0.5).unwrap();
        let (rep, _) = adjoint_split_consistency(&s, 1e-8).unwrap();
        assert!(rep.restriction_min_sv.0 > 0.1 && rep.restriction_min_sv.1 > 0.1);
    }
}
