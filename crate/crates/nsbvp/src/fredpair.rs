//! Boundary conditions as subspaces of the truncated `H^{1/2}`: Fredholm pairs,
//! elliptic decompositions `B = W_+ + graph(g)`, the adjoint condition,
//! semiregularity, the pointwise symbol test for projector conditions and the
//! projector-difference lemma.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    eye, hermitian_pencil_extremes, hstack, inverse, invariant_projector, min_singular_value, null_space,
    pinv, range_basis, spectral_norm, zeros, BlockDiag, CMat, Tolerances,
};
use crate::rng::{complex_matrix, seeded};
use crate::sobolev::{modulus_metric, reference_weight};
use crate::speccalc::SpectralSplit;
use crate::subspace::{fredholm_pair, FredholmPairReport, Metric, Subspace};
use crate::symbols::{SampleGrid, SymbolField};

/// Residual above which an extracted decomposition is rejected.
pub const DECOMPOSITION_TOL: f64 = 1e-8;

/// Boundary conditions that can be realized on a truncation.
#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    /// `chi^-(A_r) H^{1/2}`.
    Aps,
    /// APS with `add` low-lying `chi^+` directions adjoined and `remove` low-lying `chi^-` directions dropped.
    ApsModified { add: usize, remove: usize },
    /// `{v + eps T v : v in ran chi^-}` with `T = chi^+ R chi^-`, `R` random per mode and weighted by `<k>^order`.
    Graph { epsilon: f64, order: f64, seed: u64 },
    /// `P H^{1/2}` for a constant fiber projector `P`.
    PseudoLocal { projector: CMat },
    /// Span of explicit columns.
    ExplicitBasis { columns: CMat },
}

impl BoundaryCondition {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCondition::Aps => "aps",
            BoundaryCondition::ApsModified { .. } => "aps_modified",
            BoundaryCondition::Graph { .. } => "graph",
            BoundaryCondition::PseudoLocal { .. } => "pseudo_local",
            BoundaryCondition::ExplicitBasis { .. } => "explicit_basis",
        }
    }

    /// Columns spanning the condition (not orthonormalized).
    pub fn columns(&self, split: &SpectralSplit) -> Result<CMat> {
        let op = &split.op;
        Ok(match self {
            BoundaryCondition::Aps => split.range_basis(false),
            BoundaryCondition::ApsModified { add, remove } => {
                let minus = sorted_by_modulus(split, &split.range_basis(false))?;
                let plus = sorted_by_modulus(split, &split.range_basis(true))?;
                if *remove > minus.ncols() || *add > plus.ncols() {
                    return Err(Error::Invalid("modification exceeds the spectral subspace".into()));
                }
                let kept = minus.columns(*remove, minus.ncols() - remove).into_owned();
                hstack(&[&kept, &plus.columns(0, *add).into_owned()])
            }
            BoundaryCondition::Graph { epsilon, order, seed } => {
                let t = planted_graph_map(split, *order, *seed);
                let vm = split.range_basis(false);
                &vm + t.apply_mat(&vm)? * crate::linalg::cr(*epsilon)
            }
            BoundaryCondition::PseudoLocal { projector } => {
                let m = op.fiber_dim();
                if projector.shape() != (m, m) {
                    return Err(Error::DimensionMismatch { expected: m, got: projector.nrows() });
                }
                let defect = spectral_norm(&(projector * projector - projector));
                if defect > 1e-10 * spectral_norm(projector).max(1.0) {
                    return Err(Error::NotAProjectorSymbol(defect));
                }
                let r = range_basis(projector, 1e-10 * spectral_norm(projector).max(1.0));
                let mut cols = zeros(split.dim(), op.modes.len() * r.ncols());
                for (i, &k) in op.modes.iter().enumerate() {
                    for j in 0..r.ncols() {
                        let v = op.mode_vector(k, &r.column(j).into_owned())?;
                        cols.set_column(i * r.ncols() + j, &v);
                    }
                }
                cols
            }
            BoundaryCondition::ExplicitBasis { columns } => {
                if columns.nrows() != split.dim() {
                    return Err(Error::DimensionMismatch { expected: split.dim(), got: columns.nrows() });
                }
                columns.clone()
            }
        })
    }

    /// The condition as a subspace orthonormal in `H^{1/2}(A_r)`.
    pub fn realize(&self, split: &SpectralSplit) -> Result<Subspace> {
        Subspace::from_columns(&self.columns(split)?, modulus_metric(split, 0.5)?, &split.tols)
    }
}

/// Columns reordered by increasing `|| |A_r|^{1/2} v || / ||v||`, ties kept in order.
fn sorted_by_modulus(split: &SpectralSplit, cols: &CMat) -> Result<CMat> {
    let w = split.modulus_power(0.5)?.apply_mat(cols)?;
    let mut idx: Vec<(usize, f64)> =
        (0..cols.ncols()).map(|j| (j, w.column(j).norm() / cols.column(j).norm())).collect();
    idx.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut out = zeros(cols.nrows(), cols.ncols());
    for (dst, (src, _)) in idx.iter().enumerate() {
        out.set_column(dst, &cols.column(*src));
    }
    Ok(out)
}

/// `T = chi^+ <k>^order R chi^-` with random blocks `R`.
pub fn planted_graph_map(split: &SpectralSplit, order: f64, seed: u64) -> BlockDiag {
    // one stream per mode so that the map is stable under refinement
    let modes = split.op.block_modes();
    let r = BlockDiag::from_blocks(
        split
            .a_r
            .blocks()
            .iter()
            .zip(&modes)
            .map(|(b, k)| {
                let stream = k.map_or(0, |k| 1 + ((k[0] + 4096) as u64) * 8192 + (k[1] + 4096) as u64);
                complex_matrix(&mut seeded(seed, stream), b.nrows(), b.ncols()) * crate::linalg::cr(0.5)
            })
            .collect(),
    );
    let w = reference_weight(split, order);
    split.chi_plus.mul(&w).mul(&r).mul(&split.chi_minus)
}

/// `sigma_0^* B^*`: the L2 annihilator of `B`, orthonormal in `H^{1/2}(A_r^*)`.
#[derive(Clone, Debug)]
pub struct AdjointCondition {
    /// `sigma_0^* B^*`.
    pub realized: Subspace,
    /// `B^* = (sigma_0^*)^{-1} sigma_0^* B^*`.
    pub b_star: Subspace,
}

pub fn adjoint_condition(b: &Subspace, sigma0: &CMat, split_star: &SpectralSplit) -> Result<AdjointCondition> {
    let tols = &split_star.tols;
    let m = b.ambient();
    let target = modulus_metric(split_star, 0.5)?;
    let realized = b.annihilator(&eye(m), target.clone(), tols)?;
    let s0 = fiber_operator(split_star, sigma0)?;
    let inv_adj = s0.adjoint().map(|blk| inverse(blk))?;
    let b_star = Subspace::from_columns(&inv_adj.apply_mat(&realized.basis)?, target, tols)?;
    Ok(AdjointCondition { realized, b_star })
}

/// A fiber matrix acting mode by mode.
pub fn fiber_operator(split: &SpectralSplit, sigma: &CMat) -> Result<BlockDiag> {
    let m = split.op.fiber_dim();
    if sigma.shape() != (m, m) {
        return Err(Error::DimensionMismatch { expected: m, got: sigma.nrows() });
    }
    let modes = split.op.modes.len();
    Ok(split.a_r.map_ok(|b| {
        if b.nrows() == m {
            sigma.clone()
        } else {
            crate::linalg::kron(&eye(modes), sigma)
        }
    }))
}

/// Both Fredholm pairs of the decomposition test.
#[derive(Clone, Debug, Serialize)]
pub struct FpDecompositionReport {
    /// `(chi^+(A_r) H^{1/2}, B)`.
    pub first: FredholmPairReport,
    /// `(chi^-(A_r^*) H^{1/2}, B^perp)` with the L2 duality annihilator.
    pub second_duality: FredholmPairReport,
    /// Same with the annihilator taken in the `H^{1/2}` inner product.
    pub second_inner: FredholmPairReport,
    pub passes_duality: bool,
    pub passes_inner: bool,
}

pub fn fp_decomposition_check(b: &Subspace, split: &SpectralSplit, split_star: &SpectralSplit) -> Result<FpDecompositionReport> {
    let tols = &split.tols;
    let mh = modulus_metric(split, 0.5)?;
    let b = b.with_metric(mh.clone(), tols)?;
    let x_plus = Subspace::from_columns(&split.range_basis(true), mh.clone(), tols)?;
    let first = fredholm_pair(&x_plus, &b, tols)?;

    let ys = Subspace::from_columns(&split_star.range_basis(false), mh.clone(), tols)?;
    let dual = b.annihilator(&eye(b.ambient()), mh.clone(), tols)?;
    let inner = b.complement(tols)?;
    let second_duality = fredholm_pair(&ys, &dual, tols)?;
    let second_inner = fredholm_pair(&ys, &inner, tols)?;
    Ok(FpDecompositionReport {
        passes_duality: first.index == -second_duality.index,
        passes_inner: first.index == -second_inner.index,
        first,
        second_duality,
        second_inner,
    })
}

/// The eight spaces of an elliptic decomposition together with `g` and its adjoint.
#[derive(Clone, Debug)]
pub struct EllipticDecomposition {
    pub w_plus: Subspace,
    pub w_minus: Subspace,
    pub v_plus: Subspace,
    pub v_minus: Subspace,
    pub w_plus_star: Subspace,
    pub w_minus_star: Subspace,
    pub v_plus_star: Subspace,
    pub v_minus_star: Subspace,
    /// Complement of `W_+` in `B`.
    pub k: Subspace,
    /// `g` extended by zero along `W_- + W_+ + V_+`.
    pub g: CMat,
    /// `g` in `H^{1/2}`-orthonormal coordinates of `V_-` and `V_+`.
    pub g_coords: CMat,
    /// L2 adjoint of the extended `g`; restricted to `V_+^*` it is `g^*`.
    pub g_star: CMat,
    /// `sigma_0^* B^*` computed directly.
    pub adjoint_realized: Subspace,
    pub residuals: DecompositionResiduals,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DecompositionResiduals {
    /// `B` against `W_+ + graph(g)`.
    pub reconstruction: f64,
    /// `sigma_0^* B^*` against `W_-^* + {u - g^* u}`.
    pub adjoint_reconstruction: f64,
    /// Directly computed `W_-^*` against the range of the adjoint projector.
    pub star_consistency: f64,
    /// Column sum of the four ranges minus the ambient dimension.
    pub splitting_defect: i64,
}

impl DecompositionResiduals {
    pub fn max(&self) -> f64 {
        self.reconstruction.max(self.adjoint_reconstruction).max(self.star_consistency)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecompositionDims {
    pub w_plus: usize,
    pub w_minus: usize,
    pub v_plus: usize,
    pub v_minus: usize,
    pub w_plus_star: usize,
    pub w_minus_star: usize,
    pub g_norm: f64,
    pub index: i64,
}

impl EllipticDecomposition {
    pub fn dims(&self) -> DecompositionDims {
        DecompositionDims {
            w_plus: self.w_plus.dim(),
            w_minus: self.w_minus.dim(),
            v_plus: self.v_plus.dim(),
            v_minus: self.v_minus.dim(),
            w_plus_star: self.w_plus_star.dim(),
            w_minus_star: self.w_minus_star.dim(),
            g_norm: spectral_norm(&self.g_coords),
            index: self.w_plus.dim() as i64 - self.w_minus.dim() as i64,
        }
    }
}

pub fn extract_elliptic_decomposition(
    b: &Subspace,
    split: &SpectralSplit,
    split_star: &SpectralSplit,
) -> Result<EllipticDecomposition> {
    let tols = &split.tols;
    let m = split.dim();
    let mh = modulus_metric(split, 0.5)?;
    let mhs = modulus_metric(split_star, 0.5)?;
    let id = eye(m);
    let b = b.with_metric(mh.clone(), tols)?;
    let x_plus = Subspace::from_columns(&split.range_basis(true), mh.clone(), tols)?;
    let x_minus = Subspace::from_columns(&split.range_basis(false), mh.clone(), tols)?;
    let xs_minus = Subspace::from_columns(&split_star.range_basis(false), mhs.clone(), tols)?;
    let chi_minus = split.chi_minus.to_dense();

    let w_plus = x_plus.intersection(&b, tols)?;
    let v_plus = w_plus.complement_within(&x_plus, tols)?;
    let adjoint_realized = b.annihilator(&id, mhs.clone(), tols)?;
    let w_minus_star = xs_minus.intersection(&adjoint_realized, tols)?;
    let w_minus = Subspace::from_columns(&(&chi_minus * &w_minus_star.basis), mh.clone(), tols)?;
    let v_minus = w_minus_star.annihilator(&id, mh.clone(), tols)?.intersection(&x_minus, tols)?;

    let t = hstack(&[&w_minus.basis, &v_minus.basis, &w_plus.basis, &v_plus.basis]);
    let defect = t.ncols() as i64 - m as i64;
    if defect != 0 {
        return Err(Error::PreconditionViolated(format!(
            "spaces do not split the truncation: {} columns for dimension {m}",
            t.ncols()
        )));
    }
    let t_inv = inverse(&t)?;
    let sizes = [w_minus.dim(), v_minus.dim(), w_plus.dim(), v_plus.dim()];
    let proj = |which: usize| -> CMat {
        let off: usize = sizes[..which].iter().sum();
        let tc = t.columns(off, sizes[which]);
        let tr = t_inv.rows(off, sizes[which]);
        tc * tr
    };
    let (q_minus, p_minus, q_plus, p_plus) = (proj(0), proj(1), proj(2), proj(3));

    let k = w_plus.complement_within(&b, tols)?;
    let xk = &chi_minus * &k.basis;
    let xk_pinv = pinv(&xk, crate::subspace::subspace_rank_tol(spectral_norm(&xk), tols));
    let g_full = &p_plus * &k.basis * xk_pinv;
    let g = &g_full * &p_minus;
    let g_star = g.adjoint();

    let w_plus_star = Subspace::from_columns(&q_plus.adjoint(), mhs.clone(), tols)?;
    let v_plus_star = Subspace::from_columns(&p_plus.adjoint(), mhs.clone(), tols)?;
    let v_minus_star = Subspace::from_columns(&p_minus.adjoint(), mhs.clone(), tols)?;
    let w_minus_alt = Subspace::from_columns(&q_minus.adjoint(), mhs.clone(), tols)?;

    let graph = Subspace::from_columns(&(&v_minus.basis + &g * &v_minus.basis), mh.clone(), tols)?;
    let rebuilt = w_plus.sum(&graph, tols)?;
    let adj_graph = Subspace::from_columns(&(&v_plus_star.basis - &g_star * &v_plus_star.basis), mhs.clone(), tols)?;
    let adj_rebuilt = w_minus_star.sum(&adj_graph, tols)?;

    let g_coords = {
        let wv = v_plus.whitened();
        let gv = &mh.w * (&g * &v_minus.basis);
        wv.adjoint() * gv
    };
    let residuals = DecompositionResiduals {
        reconstruction: b.distance(&rebuilt),
        adjoint_reconstruction: adjoint_realized.distance(&adj_rebuilt),
        star_consistency: w_minus_star.distance(&w_minus_alt),
        splitting_defect: defect,
    };
    if residuals.max() > DECOMPOSITION_TOL {
        return Err(Error::DecompositionResidualTooLarge(residuals.max()));
    }
    Ok(EllipticDecomposition {
        w_plus,
        w_minus,
        v_plus,
        v_minus,
        w_plus_star,
        w_minus_star,
        v_plus_star,
        v_minus_star,
        k,
        g,
        g_coords,
        g_star,
        adjoint_realized,
        residuals,
    })
}

/// Quantitative semiregularity at one truncation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SemiregularityReport {
    pub s: f64,
    /// `H^s -> H^s` norm of `g` on `V_-`.
    pub g_norm: f64,
    /// Smallest `C` with `||u||_s <= C ||chi^- u||_s` on the complement of `W_+` in `B`.
    pub reg_constant: f64,
    pub bound: f64,
    pub passes: bool,
}

pub fn semiregularity_check(
    dec: &EllipticDecomposition,
    split: &SpectralSplit,
    s: f64,
    bound: f64,
) -> Result<SemiregularityReport> {
    let tols = &split.tols;
    let ms = modulus_metric(split, s)?;
    let vs = dec.v_minus.with_metric(ms.clone(), tols)?;
    let g_norm = if vs.dim() == 0 { 0.0 } else { spectral_norm(&(&ms.w * (&dec.g * &vs.basis))) };
    let reg_constant = if dec.k.dim() == 0 {
        1.0
    } else {
        let wk = &ms.w * &dec.k.basis;
        let wxk = &ms.w * (split.chi_minus.to_dense() * &dec.k.basis);
        let (_, hi) = hermitian_pencil_extremes(&(wk.adjoint() * &wk), &(wxk.adjoint() * &wxk))?;
        hi.sqrt()
    };
    Ok(SemiregularityReport { s, g_norm, reg_constant, bound, passes: g_norm <= bound && reg_constant <= bound })
}

/// A fiber projector field `(x, xi) -> sigma_P(x, xi)`.
pub type ProjectorSymbol<'a> = dyn Fn(&[f64], &[f64]) -> CMat + Sync + 'a;

/// Projector onto the generalized eigenspaces of `i sigma_A(x, xi)` with positive (or negative) real part.
pub fn chi_symbol(sigma_a: &SymbolField, plus: bool) -> impl Fn(&[f64], &[f64]) -> CMat + Sync + '_ {
    move |x, xi| {
        let m = sigma_a.principal(x, xi) * crate::linalg::I;
        invariant_projector(&m, |l| if plus { l.re > 0.0 } else { l.re < 0.0 })
            .map(|r| r.0)
            .unwrap_or_else(|_| zeros(m.nrows(), m.ncols()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SymbolSample {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub margin: f64,
    pub adjoint_margin: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SymbolTestReport {
    pub samples: Vec<SymbolSample>,
    pub passes: bool,
    pub min_margin: f64,
}

/// Smallest singular value of `P` restricted to `dom`, read in an orthonormal basis of `ran P`;
/// zero when the dimensions differ.
fn restriction_margin(p: &CMat, dom: &CMat, tol: f64) -> f64 {
    let target = range_basis(p, tol);
    if target.ncols() != dom.ncols() {
        return 0.0;
    }
    if dom.ncols() == 0 {
        return f64::INFINITY;
    }
    min_singular_value(&(target.adjoint() * p * dom))
}

pub fn pseudo_local_symbol_test(
    sigma_p: &ProjectorSymbol,
    sigma_a: &SymbolField,
    grid: &SampleGrid,
    tols: &Tolerances,
) -> Result<SymbolTestReport> {
    let samples: Vec<Result<SymbolSample>> = grid
        .points
        .par_iter()
        .map(|(x, xi)| {
            let p = sigma_p(x, xi);
            let scale = spectral_norm(&p).max(1.0);
            let defect = spectral_norm(&(&p * &p - &p));
            if defect > 1e-10 * scale {
                return Err(Error::NotAProjectorSymbol(defect));
            }
            let tol = tols.rank_tol(scale).max(1e-12);
            let ia = sigma_a.principal(x, xi) * crate::linalg::I;
            let (q, _, _) = invariant_projector(&ia, |l| l.re > 0.0)?;
            let (qs, _, _) = invariant_projector(&ia.adjoint(), |l| l.re > 0.0)?;
            let e_minus = null_space(&q, tol.max(1e-10 * spectral_norm(&q)));
            let e_minus_star = null_space(&qs, tol.max(1e-10 * spectral_norm(&qs)));
            let margin = restriction_margin(&p, &e_minus, tol) / scale;
            let adjoint_margin = restriction_margin(&p.adjoint(), &e_minus_star, tol) / scale;
            let thr = 1e-8;
            Ok(SymbolSample {
                x: x.clone(),
                xi: xi.clone(),
                margin,
                adjoint_margin,
                passes: margin > thr && adjoint_margin > thr,
            })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let min_margin = samples.iter().map(|s| s.margin.min(s.adjoint_margin)).fold(f64::INFINITY, f64::min);
    Ok(SymbolTestReport { passes: samples.iter().all(|s| s.passes), min_margin, samples })
}

/// The three conditions of the projector-difference lemma with their margins.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProjDiffReport {
    pub difference_iso: bool,
    pub adjoint_pair_iso: bool,
    pub restriction_pair_iso: bool,
    pub margins: [f64; 3],
    /// Some margin lies within a factor ten of the threshold.
    pub ambiguous: bool,
    /// `P|ker Q -> PE` alone.
    pub kernel_restriction_iso: bool,
    /// `P^*|ker Q^* -> P^*E` alone.
    pub adjoint_restriction_iso: bool,
}

impl ProjDiffReport {
    pub fn agree(&self) -> bool {
        self.difference_iso == self.adjoint_pair_iso && self.adjoint_pair_iso == self.restriction_pair_iso
    }
}

/// Default threshold for the projector-difference margins.
pub const PROJDIFF_TOL: f64 = 1e-8;

pub fn projdiff_check(p: &CMat, q: &CMat, tol: f64) -> Result<ProjDiffReport> {
    let n = p.nrows();
    for m in [p, q] {
        let d = spectral_norm(&(m * m - m));
        if d > 1e-10 * spectral_norm(m).max(1.0) {
            return Err(Error::NotAProjectorSymbol(d));
        }
    }
    let rt = |m: &CMat| 1e-10 * spectral_norm(m).max(1.0);
    let id = eye(n);
    let ker_q = null_space(q, rt(q));
    let ker_qs = null_space(&q.adjoint(), rt(q));
    let ran_q = range_basis(q, rt(q));
    let one_minus_p = &id - p;

    let m1 = min_singular_value(&(p - q));
    let kr = restriction_margin(p, &ker_q, rt(p));
    let ka = restriction_margin(&p.adjoint(), &ker_qs, rt(p));
    let kp = restriction_margin(&one_minus_p, &ran_q, rt(&one_minus_p));
    let m2 = kr.min(ka);
    let m3 = kr.min(kp);
    let margins = [m1, m2, m3];
    let ambiguous = margins.iter().any(|&m| m > tol / 10.0 && m <= tol * 10.0);
    Ok(ProjDiffReport {
        difference_iso: m1 > tol,
        adjoint_pair_iso: m2 > tol,
        restriction_pair_iso: m3 > tol,
        margins,
        ambiguous,
        kernel_restriction_iso: kr > tol,
        adjoint_restriction_iso: ka > tol,
    })
}

/// Random oblique projector of rank `k` in dimension `n`.
pub fn random_projector(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CMat {
    if k == 0 {
        return zeros(n, n);
    }
    let x = complex_matrix(rng, n, k);
    let y = complex_matrix(rng, n, k);
    let core = inverse(&(y.adjoint() * &x)).unwrap_or_else(|_| zeros(k, k));
    &x * core * y.adjoint()
}

/// Tally of the lemma over random projector pairs.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ProjDiffSweep {
    pub trials: usize,
    pub ambiguous: usize,
    pub disagreements: usize,
    pub isomorphisms: usize,
}

/// Random pairs in dimensions 2..=8; a third share an image or kernel vector so that
/// non-isomorphic cases with matching ranks occur.
pub fn projdiff_sweep(trials: usize, seed: u64, tol: f64) -> Result<ProjDiffSweep> {
    let reports: Vec<Result<ProjDiffReport>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(seed, t as u64);
            let n = rng.random_range(2..=8);
            let kp = rng.random_range(0..=n);
            let kq = if rng.random_bool(0.6) { n - kp } else { rng.random_range(0..=n) };
            let p = random_projector(&mut rng, n, kp);
            let q = match (rng.random_range(0..3), kp, kq) {
                (0, 1.., 1..) if kp + kq <= n => {
                    // shared image vector
                    let xp = range_basis(&p, 1e-10);
                    let mut x = complex_matrix(&mut rng, n, kq);
                    x.set_column(0, &xp.column(0));
                    let y = complex_matrix(&mut rng, n, kq);
                    &x * inverse(&(y.adjoint() * &x))? * y.adjoint()
                }
                (1, 1.., 1..) if kp < n => {
                    // image of Q meets the kernel of P
                    let kerp = null_space(&p, 1e-10);
                    let mut x = complex_matrix(&mut rng, n, kq);
                    x.set_column(0, &kerp.column(0));
                    let y = complex_matrix(&mut rng, n, kq);
                    &x * inverse(&(y.adjoint() * &x))? * y.adjoint()
                }
                _ => random_projector(&mut rng, n, kq),
            };
            projdiff_check(&p, &q, tol)
        })
        .collect();
    let mut sweep = ProjDiffSweep { trials, ..Default::default() };
    for r in reports {
        let r = r?;
        if r.ambiguous {
            sweep.ambiguous += 1;
            continue;
        }
        if !r.agree() {
            sweep.disagreements += 1;
        }
        if r.difference_iso {
            sweep.isomorphisms += 1;
        }
    }
    Ok(sweep)
}

/// Defect of `X + W = X + P_{Y,X} W` (projector onto `Y` along `X`) for `X + Y = Z`,
/// measured as the distance between the two spans and the dimension gap of the direct sum.
pub fn sum_dir_sum_defect(x: &CMat, y: &CMat, w: &CMat, tols: &Tolerances) -> Result<(f64, i64)> {
    let n = x.nrows();
    let metric = Metric::l2(n);
    let t = hstack(&[x, y]);
    let t_inv = inverse(&t)?;
    let py = t.columns(x.ncols(), y.ncols()) * t_inv.rows(x.ncols(), y.ncols());
    let lhs = Subspace::from_columns(&hstack(&[x, w]), metric.clone(), tols)?;
    let pw = Subspace::from_columns(&(&py * w), metric.clone(), tols)?;
    let xs = Subspace::from_columns(x, metric.clone(), tols)?;
    let rhs = xs.sum(&pw, tols)?;
    let direct_gap = (xs.dim() + pw.dim()) as i64 - rhs.dim() as i64;
    Ok((lhs.distance(&rhs), direct_gap))
}

/// Smallest singular value of the projector onto `H_1` along `H_2`, restricted to `H_1'`.
pub fn sub_isom_margin(h1: &CMat, h1p: &CMat, h2: &CMat) -> Result<f64> {
    let t = hstack(&[h1, h2]);
    let t_inv = inverse(&t)?;
    let coords = t_inv.rows(0, h1.ncols()) * h1p;
    let q = crate::linalg::orth(h1p, &Tolerances::default());
    let scale = spectral_norm(&pinv(&(q.adjoint() * h1p), 1e-14)).max(1.0);
    Ok(min_singular_value(&coords) / scale / spectral_norm(&t).max(1.0))
}
