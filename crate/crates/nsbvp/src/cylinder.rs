//! The model operator `D_0 = sigma_0 (d/dt + A)` on `[0, rho] x Sigma`.
//!
//! Fields are sampled on a uniform grid `t_j = j rho / J`. The Duhamel
//! integral and the solution operator use exact steps `exp(-dt |A_r|)` with
//! trapezoidal source coupling; boundary value problems use Crank-Nicolson
//! in time with annihilator rows for the boundary conditions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    cr, eye, gauss_legendre, hermitian_pencil_extremes, hstack, inverse, null_space, pinv, singular_values,
    spectral_norm, svd_full, vstack, zeros, BlockDiag, CMat, CVec, C64,
};
use crate::rng::{complex_vector, seeded};
use crate::sobolev::CheckSpaceNorm;
use crate::speccalc::{strip_count, SpectralSplit};

/// Relative singular-value threshold for kernel decisions of the discrete problems.
pub const CYLINDER_RANK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    pub rho: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(rho: f64, steps: usize) -> Result<Self> {
        if !(rho > 0.0) || steps == 0 {
            return Err(Error::Invalid(format!("time grid needs rho > 0 and steps > 0, got {rho}, {steps}")));
        }
        Ok(TimeGrid { rho, steps })
    }

    pub fn dt(&self) -> f64 {
        self.rho / self.steps as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        self.rho * j as f64 / self.steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.t(j)).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.dt();
        (0..=self.steps).map(|j| if j == 0 || j == self.steps { 0.5 * h } else { h }).collect()
    }
}

/// Coefficient vectors on a time grid.
#[derive(Clone, Debug)]
pub struct CylinderField {
    pub grid: TimeGrid,
    pub values: Vec<CVec>,
    /// Residual of the equation the field was built to satisfy, if any.
    pub residual: Option<f64>,
}

impl CylinderField {
    pub fn zeros(grid: TimeGrid, m: usize) -> Self {
        CylinderField { grid, values: vec![CVec::zeros(m); grid.steps + 1], residual: None }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> CVec) -> Self {
        CylinderField { grid, values: grid.nodes().into_iter().map(f).collect(), residual: None }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Trapezoid `L2([0, rho] x Sigma)` norm.
    pub fn norm(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, v)| w * v.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &CylinderField) -> CylinderField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        CylinderField { grid: self.grid, values, residual: None }
    }

    pub fn map(&self, op: &BlockDiag) -> Result<CylinderField> {
        let values = self.values.iter().map(|v| op.apply(v)).collect::<Result<Vec<_>>>()?;
        Ok(CylinderField { grid: self.grid, values, residual: None })
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// CSV rows `t,index,re,im` for nonzero entries.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,index,re,im\n");
        for (j, v) in self.values.iter().enumerate() {
            for (i, z) in v.iter().enumerate() {
                s.push_str(&format!("{:.12e},{},{:.12e},{:.12e}\n", self.grid.t(j), i, z.re, z.im));
            }
        }
        s
    }
}

/// Plateau cutoff: `1` on `[0, T_c/2]`, `0` from `2 T_c/3` on, quintic smoothstep between.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Cutoff {
    pub tc: f64,
}

impl Cutoff {
    fn s(&self, t: f64) -> f64 {
        (t - self.tc / 2.0) / (self.tc / 6.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else {
            -30.0 * s * s * (1.0 - s) * (1.0 - s) / (self.tc / 6.0)
        }
    }
}

/// A field with exact time derivative.
pub trait SmoothField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64) -> CVec;
    fn derivative(&self, t: f64) -> CVec;

    fn sample(&self, grid: TimeGrid) -> (CylinderField, CylinderField) {
        (
            CylinderField::from_fn(grid, |t| self.value(t)),
            CylinderField::from_fn(grid, |t| self.derivative(t)),
        )
    }
}

/// `u(t) = sum_l c_l exp(i omega_l t)`.
#[derive(Clone, Debug)]
pub struct TrigField {
    pub freqs: Vec<f64>,
    pub coeffs: Vec<CVec>,
}

impl TrigField {
    /// Random coefficients supported on modes with `|k|_inf <= max_mode`.
    pub fn random_low_mode(split: &SpectralSplit, max_mode: i64, freqs: &[f64], seed: u64) -> Result<Self> {
        let op = &split.op;
        let m = op.fiber_dim();
        let mut rng = seeded(seed, 21);
        let mut coeffs = Vec::with_capacity(freqs.len());
        for _ in freqs {
            let mut c = CVec::zeros(split.dim());
            for &k in op.modes.iter().filter(|k| k[0].abs() <= max_mode && k[1].abs() <= max_mode) {
                c += op.mode_vector(k, &complex_vector(&mut rng, m))?;
            }
            coeffs.push(c);
        }
        Ok(TrigField { freqs: freqs.to_vec(), coeffs })
    }

    pub fn map(&self, op: &BlockDiag) -> Result<TrigField> {
        let coeffs = self.coeffs.iter().map(|c| op.apply(c)).collect::<Result<Vec<_>>>()?;
        Ok(TrigField { freqs: self.freqs.clone(), coeffs })
    }
}

impl SmoothField for TrigField {
    fn dim(&self) -> usize {
        self.coeffs.first().map_or(0, |c| c.len())
    }

    fn value(&self, t: f64) -> CVec {
        let mut out = CVec::zeros(self.dim());
        for (w, c) in self.freqs.iter().zip(&self.coeffs) {
            out += c * C64::from_polar(1.0, w * t);
        }
        out
    }

    fn derivative(&self, t: f64) -> CVec {
        let mut out = CVec::zeros(self.dim());
        for (w, c) in self.freqs.iter().zip(&self.coeffs) {
            out += c * (C64::from_polar(1.0, w * t) * C64::new(0.0, *w));
        }
        out
    }
}

/// `eta(t) exp(-t |A_r|) u` with its exact derivative.
pub struct ExtensionField<'a> {
    pub split: &'a SpectralSplit,
    pub eta: Cutoff,
    pub u: CVec,
}

impl SmoothField for ExtensionField<'_> {
    fn dim(&self) -> usize {
        self.u.len()
    }

    fn value(&self, t: f64) -> CVec {
        let e = self.split.semigroup(t).and_then(|s| s.apply(&self.u)).expect("semigroup");
        e * cr(self.eta.value(t))
    }

    fn derivative(&self, t: f64) -> CVec {
        let e = self.split.semigroup(t).and_then(|s| s.apply(&self.u)).expect("semigroup");
        let ae = self.split.modulus.apply(&e).expect("modulus");
        e * cr(self.eta.derivative(t)) - ae * cr(self.eta.value(t))
    }
}

/// `(E u)(t_j) = eta(t_j) exp(-t_j |A_r|) u`, propagated by exact steps.
pub fn extension(u: &CVec, split: &SpectralSplit, eta: Cutoff, grid: TimeGrid) -> Result<CylinderField> {
    let e = split.semigroup(grid.dt())?;
    let mut v = u.clone();
    let mut values = Vec::with_capacity(grid.steps + 1);
    for j in 0..=grid.steps {
        if j > 0 {
            v = e.apply(&v)?;
        }
        values.push(&v * cr(eta.value(grid.t(j))));
    }
    Ok(CylinderField { grid, values, residual: None })
}

/// `W(t; f) = int_0^t exp(-(t - s)|A_r|) f(s) ds`.
pub fn duhamel(f: &CylinderField, split: &SpectralSplit) -> Result<CylinderField> {
    let e = split.semigroup(f.grid.dt())?;
    let h = cr(0.5 * f.grid.dt());
    let mut values = vec![CVec::zeros(f.dim())];
    for j in 0..f.grid.steps {
        let next = e.apply(&(&values[j] + &f.values[j] * h))? + &f.values[j + 1] * h;
        values.push(next);
    }
    let mut w = CylinderField { grid: f.grid, values, residual: None };
    w.residual = Some(midpoint_residual(&w, f, &split.modulus)?);
    Ok(w)
}

/// Relative L2 norm of `(w_{j+1} - w_j)/dt + a (w_{j+1} + w_j)/2 - (f_{j+1} + f_j)/2`.
pub fn midpoint_residual(w: &CylinderField, f: &CylinderField, a: &BlockDiag) -> Result<f64> {
    let dt = w.grid.dt();
    let mut num = 0.0;
    for j in 0..w.grid.steps {
        let d = (&w.values[j + 1] - &w.values[j]) * cr(1.0 / dt);
        let avg = (&w.values[j + 1] + &w.values[j]) * cr(0.5);
        let src = (&f.values[j + 1] + &f.values[j]) * cr(0.5);
        num += dt * (d + a.apply(&avg)? - src).norm_squared();
    }
    let den = f.norm().max(f64::MIN_POSITIVE);
    Ok(num.sqrt() / den)
}

/// `int_0^t e^{-(t-s)|A_r|} chi^+ u(s) ds - int_t^rho e^{-(s-t)|A_r|} chi^- u(s) ds`.
pub fn solution_operator(u: &CylinderField, split: &SpectralSplit) -> Result<CylinderField> {
    let plus = u.map(&split.chi_plus)?;
    let minus = u.map(&split.chi_minus)?;
    let w = duhamel(&plus, split)?;
    let e = split.semigroup(u.grid.dt())?;
    let h = cr(0.5 * u.grid.dt());
    let n = u.grid.steps;
    let mut back = vec![CVec::zeros(u.dim()); n + 1];
    for j in (0..n).rev() {
        back[j] = e.apply(&(&back[j + 1] + &minus.values[j + 1] * h))? + &minus.values[j] * h;
    }
    let values = w.values.iter().zip(&back).map(|(a, b)| a - b).collect();
    let mut s = CylinderField { grid: u.grid, values, residual: None };
    s.residual = Some(midpoint_residual(&s, u, &split.a_r)?);
    Ok(s)
}

/// `(||chi^+ (S u)(0)||, ||chi^- (S u)(rho)||)`.
pub fn boundary_vanishing(s: &CylinderField, split: &SpectralSplit) -> Result<(f64, f64)> {
    let first = split.chi_plus.apply(&s.values[0])?.norm();
    let last = split.chi_minus.apply(&s.values[s.grid.steps])?.norm();
    Ok((first, last))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegInvReport {
    /// L2 norm of `(1 - S D) u - e^{-t|A_r|} chi^+ u(0) - e^{-(rho - t)|A_r|} chi^- u(rho)`.
    pub defect: f64,
    /// L2 norm of the far-end term `e^{-(rho - t)|A_r|} chi^- u(rho)`.
    pub far_end_term: f64,
    pub norm: f64,
}

/// Defect of `(1 - S_{0,r} sigma_0^{-1} D_{0,r}) u = e^{-t|A_r|} chi^+ u(0) + e^{-(rho-t)|A_r|} chi^- u(rho)`.
/// With `strict`, `chi^- u(rho) = 0` is required.
pub fn reginv_identity(u: &dyn SmoothField, split: &SpectralSplit, grid: TimeGrid, strict: bool) -> Result<(CylinderField, RegInvReport)> {
    let (val, der) = u.sample(grid);
    let end = split.chi_minus.apply(&val.values[grid.steps])?;
    if strict && end.norm() > 1e-10 * val.values[grid.steps].norm().max(1.0) {
        return Err(Error::PreconditionViolated(format!("chi^- u(rho) has norm {:e}", end.norm())));
    }
    let du = CylinderField {
        grid,
        values: val.values.iter().zip(&der.values).map(|(v, d)| Ok(d + split.a_r.apply(v)?)).collect::<Result<_>>()?,
        residual: None,
    };
    let sdu = solution_operator(&du, split)?;
    let e = split.semigroup(grid.dt())?;
    let n = grid.steps;
    let mut fwd = vec![split.chi_plus.apply(&val.values[0])?];
    for j in 0..n {
        fwd.push(e.apply(&fwd[j])?);
    }
    let mut bwd = vec![CVec::zeros(u.dim()); n + 1];
    bwd[n] = end;
    for j in (0..n).rev() {
        bwd[j] = e.apply(&bwd[j + 1])?;
    }
    let values: Vec<CVec> = (0..=n).map(|j| &val.values[j] - &sdu.values[j] - &fwd[j] - &bwd[j]).collect();
    let defect = CylinderField { grid, values, residual: None };
    let far = CylinderField { grid, values: bwd, residual: None };
    let rep = RegInvReport { defect: defect.norm(), far_end_term: far.norm(), norm: val.norm() };
    Ok((defect, rep))
}

/// Rows `N` with `N u = 0` exactly on the span of `basis` (L2 annihilator, orthonormal rows).
pub fn annihilator_rows(basis: &CMat) -> CMat {
    let m = basis.nrows();
    if basis.ncols() == 0 {
        return eye(m);
    }
    let tol = CYLINDER_RANK_TOL * spectral_norm(basis).max(1.0);
    null_space(&basis.adjoint(), tol).adjoint()
}

/// `base^p` by repeated squaring.
fn block_pow(base: &BlockDiag, mut p: usize) -> BlockDiag {
    let mut acc = base.identity_like();
    let mut sq = base.clone();
    while p > 0 {
        if p & 1 == 1 {
            acc = acc.mul(&sq);
        }
        sq = sq.mul(&sq);
        p >>= 1;
    }
    acc
}

/// Boundary value problem `(d/dt + A_r) u = sigma_0^{-1} f` with `u(0) in bc_left`, `u(rho) in bc_right`.
pub struct CylinderProblem<'a> {
    pub split: &'a SpectralSplit,
    pub grid: TimeGrid,
    pub sigma0: Option<CMat>,
    /// Spanning columns of the condition at `t = 0`.
    pub bc_left: CMat,
    /// Spanning columns of the condition at `t = rho`.
    pub bc_right: CMat,
    pub source: CylinderField,
}

impl<'a> CylinderProblem<'a> {
    /// The conditions `u(0) in ran chi^-`, `u(rho) in ran chi^+`.
    pub fn with_b0(split: &'a SpectralSplit, grid: TimeGrid, source: CylinderField) -> Self {
        CylinderProblem {
            split,
            grid,
            sigma0: None,
            bc_left: split.range_basis(false),
            bc_right: split.range_basis(true),
            source,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BvpSolution {
    pub field: CylinderField,
    /// Initial values `u(0)` of a basis of the kernel.
    pub kernel: Vec<CVec>,
    pub cokernel_dim: usize,
    pub min_singular_value: f64,
    /// Crank-Nicolson residual relative to the source.
    pub residual: f64,
    pub boundary_residual: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BvpSummary {
    pub kernel_dim: usize,
    pub cokernel_dim: usize,
    pub min_singular_value: f64,
    pub residual: f64,
    pub boundary_residual: f64,
}

impl BvpSolution {
    pub fn summary(&self) -> BvpSummary {
        BvpSummary {
            kernel_dim: self.kernel.len(),
            cokernel_dim: self.cokernel_dim,
            min_singular_value: self.min_singular_value,
            residual: self.residual,
            boundary_residual: self.boundary_residual,
        }
    }
}

/// Crank-Nicolson factors split along the dichotomy: forward on `chi^+`, backward on `chi^-`.
struct Dichotomy {
    forward: BlockDiag,
    backward: BlockDiag,
    l_plus_inv: BlockDiag,
    r_minus_inv: BlockDiag,
    l: BlockDiag,
    r: BlockDiag,
}

impl Dichotomy {
    fn new(split: &SpectralSplit, a: &BlockDiag, dt: f64) -> Result<Self> {
        let half = cr(0.5 * dt);
        let l = a.scale(half).add(&a.identity_like());
        let r = a.identity_like().sub(&a.scale(half));
        let l_plus_inv = l.mul(&split.chi_plus).add(&split.chi_minus).map(inverse)?;
        let r_minus_inv = r.mul(&split.chi_minus).add(&split.chi_plus).map(inverse)?;
        let forward = l_plus_inv.mul(&split.chi_plus).mul(&r);
        let backward = r_minus_inv.mul(&split.chi_minus).mul(&l);
        Ok(Dichotomy { forward, backward, l_plus_inv, r_minus_inv, l, r })
    }
}

pub fn solve_bvp(prob: &CylinderProblem) -> Result<BvpSolution> {
    let split = prob.split;
    let grid = prob.grid;
    let n = grid.steps;
    let dt = grid.dt();
    let m = split.dim();
    let g = match &prob.sigma0 {
        Some(s0) => {
            let inv = crate::fredpair::fiber_operator(split, s0)?.map(inverse)?;
            prob.source.map(&inv)?
        }
        None => prob.source.clone(),
    };
    if g.dim() != m || g.grid.steps != n {
        return Err(Error::DimensionMismatch { expected: m, got: g.dim() });
    }
    let d = Dichotomy::new(split, &split.a_r, dt)?;
    let h = cr(0.5 * dt);

    // particular solution: forward on chi^+, backward on chi^-
    let mut p_plus = vec![CVec::zeros(m); n + 1];
    for j in 0..n {
        let src = (&g.values[j] + &g.values[j + 1]) * h;
        p_plus[j + 1] = d.l_plus_inv.apply(&split.chi_plus.apply(&(d.r.apply(&p_plus[j])? + src))?)?;
    }
    let mut p_minus = vec![CVec::zeros(m); n + 1];
    for j in (0..n).rev() {
        let src = (&g.values[j] + &g.values[j + 1]) * h;
        p_minus[j] = d.r_minus_inv.apply(&split.chi_minus.apply(&(d.l.apply(&p_minus[j + 1])? - src))?)?;
    }

    let y_plus = split.range_basis(true);
    let y_minus = split.range_basis(false);
    let gj_plus = block_pow(&d.forward, n).apply_mat(&y_plus)?;
    let gj_minus = block_pow(&d.backward, n).apply_mat(&y_minus)?;
    let nl = annihilator_rows(&prob.bc_left);
    let nr = annihilator_rows(&prob.bc_right);
    let sys = vstack(&[
        &hstack(&[&(&nl * &y_plus), &(&nl * &gj_minus)]),
        &hstack(&[&(&nr * &gj_plus), &(&nr * &y_minus)]),
    ]);
    let rhs0 = vstack(&[
        &(&nl * CMat::from_column_slice(m, 1, (&p_plus[0] + &p_minus[0]).as_slice())),
        &(&nr * CMat::from_column_slice(m, 1, (&p_plus[n] + &p_minus[n]).as_slice())),
    ]) * cr(-1.0);

    let (u_sv, s, v_sv) = svd_full(&sys);
    let tol = CYLINDER_RANK_TOL * s.first().copied().unwrap_or(0.0).max(1.0);
    let rank = s.iter().filter(|&&x| x > tol).count();
    let min_sv = if sys.ncols() == 0 { f64::INFINITY } else if s.len() < sys.ncols() { 0.0 } else { *s.last().unwrap() };
    let mut coef = CVec::zeros(sys.ncols());
    for i in 0..rank {
        let c = u_sv.column(i).dotc(&rhs0.column(0)) / cr(s[i]);
        coef += v_sv.column(i) * c;
    }
    let dp = y_plus.ncols();
    let kernel: Vec<CVec> = (rank..sys.ncols())
        .map(|i| {
            let c = v_sv.column(i);
            &y_plus * c.rows(0, dp) + &gj_minus * c.rows(dp, sys.ncols() - dp)
        })
        .collect();

    let mut a = &y_plus * coef.rows(0, dp);
    let mut values: Vec<CVec> = Vec::with_capacity(n + 1);
    for j in 0..=n {
        if j > 0 {
            a = d.forward.apply(&a)?;
        }
        values.push(&p_plus[j] + &p_minus[j] + &a);
    }
    let mut b = &y_minus * coef.rows(dp, sys.ncols() - dp);
    for j in (0..=n).rev() {
        if j < n {
            b = d.backward.apply(&b)?;
        }
        values[j] += &b;
    }
    let field = CylinderField { grid, values, residual: None };
    let residual = midpoint_residual(&field, &g, &split.a_r)?;
    let boundary_residual = (&nl * &field.values[0]).norm() + (&nr * &field.values[n]).norm();
    Ok(BvpSolution {
        residual,
        boundary_residual,
        field: CylinderField { residual: Some(residual), ..field },
        kernel,
        cokernel_dim: sys.nrows() - rank,
        min_singular_value: min_sv,
    })
}

/// Kernel and cokernel of the full Crank-Nicolson system of one block.
fn global_block_dims(a: &CMat, nl: &CMat, nr: &CMat, steps: usize, dt: f64) -> (usize, usize) {
    let m = a.nrows();
    let half = cr(0.5 * dt);
    let l = eye(m) + a * half;
    let r = eye(m) - a * half;
    let rows = steps * m + nl.nrows() + nr.nrows();
    let cols = (steps + 1) * m;
    let mut sys = zeros(rows, cols);
    for j in 0..steps {
        sys.view_mut((j * m, j * m), (m, m)).copy_from(&(-&r));
        sys.view_mut((j * m, (j + 1) * m), (m, m)).copy_from(&l);
    }
    let o = steps * m;
    sys.view_mut((o, 0), (nl.nrows(), m)).copy_from(nl);
    sys.view_mut((o + nl.nrows(), steps * m), (nr.nrows(), m)).copy_from(nr);
    let s = singular_values(&sys);
    let tol = CYLINDER_RANK_TOL * s.first().copied().unwrap_or(0.0).max(1.0);
    let rank = s.iter().filter(|&&x| x > tol).count();
    (cols - rank, rows - rank)
}

/// Kernel and cokernel from the fundamental solution `exp(-rho A)` of one block.
fn oracle_block_dims(a: &CMat, left: &CMat, nr: &CMat, rho: f64) -> (usize, usize) {
    let phi = (a * cr(-rho)).exp();
    let k = nr * phi * left;
    if k.nrows() == 0 || k.ncols() == 0 {
        return (left.ncols(), nr.nrows());
    }
    let s = singular_values(&k);
    let tol = CYLINDER_RANK_TOL * s.first().copied().unwrap_or(0.0).max(1.0);
    let rank = s.iter().filter(|&&x| x > tol).count();
    (left.ncols() - rank, nr.nrows() - rank)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IndexReport {
    pub r_left: f64,
    pub r_right: f64,
    pub rho: f64,
    pub steps: usize,
    pub global: (usize, usize),
    pub oracle: (usize, usize),
    pub index: i64,
    pub strip_count: i64,
}

/// Index of `d/dt + A` on `[0, rho]` with `u(0) in ran chi^-(A_{r'})` and `u(rho) in ran chi^+(A_r)`.
///
/// Both the global Crank-Nicolson system and the fundamental-solution oracle are evaluated
/// block by block; they must agree.
pub fn index_strip(op: &crate::discretize::FourierOperator, r: f64, r_prime: f64, rho: Option<f64>, steps: usize) -> Result<IndexReport> {
    let sr = SpectralSplit::at(op, r)?;
    let sq = if r_prime == r { sr.clone() } else { SpectralSplit::at(op, r_prime)? };
    let a = &op.matrix;
    let max_re = sr.eigenvalues.iter().map(|l| l.re.abs()).fold(0.0, f64::max);
    let rho = rho.unwrap_or_else(|| if max_re > 8.0 { 8.0 / max_re } else { 1.0 });
    // keep the Crank-Nicolson factors away from singular
    let mut steps = steps.max(1);
    loop {
        let dt = rho / steps as f64;
        let bad = sr.eigenvalues.iter().any(|l| {
            let z = *l * (0.5 * dt);
            (cr(1.0) + z).norm() < 0.1 || (cr(1.0) - z).norm() < 0.1
        });
        if !bad {
            break;
        }
        steps *= 2;
    }
    let dt = rho / steps as f64;
    let per: Vec<((usize, usize), (usize, usize))> = a
        .blocks()
        .par_iter()
        .zip(sq.chi_minus.blocks().par_iter().zip(sr.chi_plus.blocks().par_iter()))
        .map(|(blk, (qm, rp))| {
            let left = crate::linalg::orth(qm, &sr.tols);
            let nl = annihilator_rows(&left);
            let nr = annihilator_rows(&crate::linalg::orth(rp, &sr.tols));
            (global_block_dims(blk, &nl, &nr, steps, dt), oracle_block_dims(blk, &left, &nr, rho))
        })
        .collect();
    let sum = |f: fn(&((usize, usize), (usize, usize))) -> (usize, usize)| {
        per.iter().map(f).fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
    };
    let global = sum(|p| p.0);
    let oracle = sum(|p| p.1);
    let gi = global.0 as i64 - global.1 as i64;
    let oi = oracle.0 as i64 - oracle.1 as i64;
    if global != oracle {
        return Err(Error::MethodDisagreement { global: gi, oracle: oi });
    }
    let count = strip_count(&sr.eigenvalues, r, r_prime) as i64;
    Ok(IndexReport {
        r_left: r,
        r_right: r_prime,
        rho,
        steps,
        global,
        oracle,
        index: gi,
        strip_count: if r <= r_prime { count } else { -count },
    })
}

/// Kernel and cokernel of the problem with `u(0) in ran chi^-(A_r)`, `u(rho) in ran chi^+(A_r)`,
/// block by block through the global Crank-Nicolson system.
pub fn b0_kernel_cokernel(split: &SpectralSplit, grid: TimeGrid) -> Result<(usize, usize)> {
    let dims: Vec<(usize, usize)> = split
        .a_r
        .blocks()
        .par_iter()
        .zip(split.chi_minus.blocks().par_iter().zip(split.chi_plus.blocks().par_iter()))
        .map(|(a, (cm, cp))| {
            let nl = annihilator_rows(&crate::linalg::orth(cm, &split.tols));
            let nr = annihilator_rows(&crate::linalg::orth(cp, &split.tols));
            global_block_dims(a, &nl, &nr, grid.steps, grid.dt())
        })
        .collect();
    Ok(dims.iter().fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1)))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GreensReport {
    pub lhs: (f64, f64),
    pub rhs: (f64, f64),
    pub defect: f64,
}

/// `<D u, v> - <u, D^dagger v>` against `<sigma_0 u(rho), v(rho)> - <sigma_0 u(0), v(0)>`,
/// with `D = sigma_0 (d/dt + A)` and `D^dagger v = -sigma_0^* v' + A^* sigma_0^* v`.
pub fn greens_defect(
    u: &dyn SmoothField,
    v: &dyn SmoothField,
    a: &BlockDiag,
    sigma0: &BlockDiag,
    grid: TimeGrid,
) -> Result<GreensReport> {
    let inner = |x: &CVec, y: &CVec| y.dotc(x);
    let s0h = sigma0.adjoint();
    let ah = a.adjoint();
    let w = grid.weights();
    let mut lhs = C64::new(0.0, 0.0);
    for (j, t) in grid.nodes().into_iter().enumerate() {
        let (uv, ud) = (u.value(t), u.derivative(t));
        let (vv, vd) = (v.value(t), v.derivative(t));
        let du = sigma0.apply(&(ud + a.apply(&uv)?))?;
        let ddv = ah.apply(&s0h.apply(&vv)?)? - s0h.apply(&vd)?;
        lhs += (inner(&du, &vv) - inner(&uv, &ddv)) * w[j];
    }
    let bdy = |t: f64| -> Result<C64> { Ok(inner(&sigma0.apply(&u.value(t))?, &v.value(t))) };
    let rhs = bdy(grid.rho)? - bdy(0.0)?;
    Ok(GreensReport { lhs: (lhs.re, lhs.im), rhs: (rhs.re, rhs.im), defect: (lhs - rhs).norm() })
}

/// Largest `|A_r|` eigenvalue modulus.
fn modulus_max(split: &SpectralSplit) -> f64 {
    split.modulus_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Time steps resolving the stiffest mode: `dt * max|A_r| <= 1`.
pub fn resolving_steps(split: &SpectralSplit, rho: f64, min_steps: usize) -> usize {
    min_steps.max((rho * modulus_max(split)).ceil() as usize)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceBounds {
    /// `sup ||u(0)||_check / ||u||_{D_0}` over discrete fields.
    pub restriction: f64,
    /// `sup ||E u||_{D_0} / ||u||_check`.
    pub extension: f64,
    pub steps: usize,
}

/// Empirical constants of the trace and extension estimates, block by block.
pub fn trace_bound_report(split: &SpectralSplit, rho: f64, eta: Cutoff) -> Result<TraceBounds> {
    let steps = resolving_steps(split, rho, 64);
    let dt = rho / steps as f64;
    let check = CheckSpaceNorm::check(split)?.gram();
    let restriction = split
        .a_r
        .blocks()
        .par_iter()
        .zip(check.blocks().par_iter())
        .map(|(a, g)| restriction_block(a, g, steps, dt))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt();

    // extension Gram on Gauss-Legendre panels: graded on the plateau, uniform on the ramp
    let (x, wq) = gauss_legendre(16);
    let lam = modulus_max(split).max(1.0);
    let plateau = eta.tc / 2.0;
    let mut edges = vec![0.0];
    let mut e = (0.05 / lam).min(plateau / 2.0);
    while e < plateau {
        edges.push(e);
        e *= 1.6;
    }
    edges.push(plateau);
    for k in 1..=4 {
        edges.push(plateau + (eta.tc * 2.0 / 3.0 - plateau) * k as f64 / 4.0);
    }
    let mut nodes = Vec::new();
    for w in edges.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        for k in 0..16 {
            nodes.push((w[0] + half * (x[k] + 1.0), half * wq[k]));
        }
    }
    let mut gram = split.a_r.map_ok(|b| zeros(b.nrows(), b.ncols()));
    for (t, w) in nodes {
        let sg = split.semigroup(t)?;
        let (et, dr) = (eta.value(t), eta.derivative(t));
        let ext = sg.scale(cr(et));
        let deriv = sg.scale(cr(dr)).sub(&split.modulus.mul(&sg).scale(cr(et))).add(&split.a_r.mul(&sg).scale(cr(et)));
        gram = gram.add(&ext.zip(&deriv, |e, d| (e.adjoint() * e + d.adjoint() * d) * cr(w)));
    }
    let extension = gram
        .blocks()
        .par_iter()
        .zip(check.blocks().par_iter())
        .map(|(ge, gc)| hermitian_pencil_extremes(ge, gc).map(|p| p.1))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt();
    Ok(TraceBounds { restriction, extension, steps })
}

/// Largest ratio `||u_0||^2_check / min ||u||^2_{D_0}` over extensions of `u_0` in one block.
fn restriction_block(a: &CMat, check: &CMat, steps: usize, dt: f64) -> Result<f64> {
    let m = a.nrows();
    let cols = (steps + 1) * m;
    // rows: sqrt(dt) * midpoint equation, then sqrt(w_j) * u_j
    let mut c = zeros(steps * m + cols, cols);
    let sq = cr(dt.sqrt());
    let half = cr(0.5);
    let d = eye(m) * cr(1.0 / dt);
    for j in 0..steps {
        let left = (a * half - &d) * sq;
        let right = (a * half + &d) * sq;
        c.view_mut((j * m, j * m), (m, m)).copy_from(&left);
        c.view_mut((j * m, (j + 1) * m), (m, m)).copy_from(&right);
    }
    for j in 0..=steps {
        let w = if j == 0 || j == steps { 0.5 * dt } else { dt };
        c.view_mut((steps * m + j * m, j * m), (m, m)).copy_from(&(eye(m) * cr(w.sqrt())));
    }
    let h = c.adjoint() * &c;
    let h00 = h.view((0, 0), (m, m)).into_owned();
    let h0r = h.view((0, m), (m, cols - m)).into_owned();
    let hrr = h.view((m, m), (cols - m, cols - m)).into_owned();
    let schur = &h00 - &h0r * crate::linalg::solve(&hrr, &h0r.adjoint())?;
    hermitian_pencil_extremes(check, &schur).map(|p| p.1)
}

/// Matrix of `f -> W(.; f)` on a grid for one block, `(steps+1) m` square.
fn duhamel_matrix(e: &CMat, steps: usize, dt: f64) -> CMat {
    let m = e.nrows();
    let n = (steps + 1) * m;
    let mut w = zeros(n, n);
    let h = cr(0.5 * dt);
    for j in 0..steps {
        let prev = w.rows(j * m, m).into_owned();
        let mut next = e * prev;
        {
            let mut a = next.columns_mut(j * m, m);
            a += e * h;
        }
        {
            let mut b = next.columns_mut((j + 1) * m, m);
            b += eye(m) * h;
        }
        w.rows_mut((j + 1) * m, m).copy_from(&next);
    }
    w
}

fn kron_eye(steps: usize, b: &CMat) -> CMat {
    crate::linalg::kron(&eye(steps + 1), b)
}

fn weight_matrix(grid: TimeGrid, m: usize, power: f64) -> CMat {
    let w = grid.weights();
    let mut d = zeros((grid.steps + 1) * m, (grid.steps + 1) * m);
    for (j, wj) in w.iter().enumerate() {
        for i in 0..m {
            d[(j * m + i, j * m + i)] = cr(wj.powf(power));
        }
    }
    d
}

/// `sup (int ||W'||^2 + || |A_r| W ||^2)^{1/2} / (int ||f||^2)^{1/2}` with `W' = f - |A_r| W`.
pub fn max_regularity_constant(split: &SpectralSplit, rho: f64, min_steps: usize) -> Result<f64> {
    let steps = resolving_steps(split, rho, min_steps);
    let grid = TimeGrid::new(rho, steps)?;
    let e = split.semigroup(grid.dt())?;
    let vals = split
        .modulus
        .blocks()
        .par_iter()
        .zip(e.blocks().par_iter())
        .map(|(md, eb)| {
            let m = md.nrows();
            let mut y = duhamel_matrix(eb, steps, grid.dt());
            for j in 0..=steps {
                let rows = md * y.rows(j * m, m);
                y.rows_mut(j * m, m).copy_from(&rows);
            }
            // y = S^{1/2} A K S^{-1/2} with the trapezoid weights S
            let sw: Vec<f64> = grid.weights().iter().flat_map(|w| std::iter::repeat_n(w.sqrt(), m)).collect();
            for j in 0..y.ncols() {
                for i in 0..y.nrows() {
                    y[(i, j)] *= sw[i] / sw[j];
                }
            }
            let x = eye(y.nrows()) - &y;
            let g = x.adjoint() * &x + y.adjoint() * &y;
            g.symmetric_eigenvalues().max().max(0.0).sqrt()
        })
        .collect::<Vec<f64>>();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Second-order difference matrix for `d/dt` on the grid.
fn difference_matrix(steps: usize, dt: f64) -> CMat {
    let n = steps + 1;
    let mut d = zeros(n, n);
    let c = 1.0 / (2.0 * dt);
    d[(0, 0)] = cr(-3.0 * c);
    d[(0, 1)] = cr(4.0 * c);
    d[(0, 2)] = cr(-c);
    for j in 1..steps {
        d[(j, j - 1)] = cr(-c);
        d[(j, j + 1)] = cr(c);
    }
    d[(steps, steps)] = cr(3.0 * c);
    d[(steps, steps - 1)] = cr(-4.0 * c);
    d[(steps, steps - 2)] = cr(c);
    d
}

/// `||S_{0,r} u||_{H^{k+1}} <= C ||u||_{H^k}` for `k` in `{0, 1}` with the anisotropic norms
/// `sum_l || |A_r|^l d_t^{k-l} u ||`; returns the largest discrete `C` over blocks.
pub fn sreg_constant(split: &SpectralSplit, rho: f64, min_steps: usize, k: usize) -> Result<f64> {
    if k > 1 {
        return Err(Error::Invalid("only k = 0 and k = 1 are supported".into()));
    }
    let steps = resolving_steps(split, rho, min_steps);
    let grid = TimeGrid::new(rho, steps)?;
    let dt = grid.dt();
    let e = split.semigroup(dt)?;
    let vals = split
        .modulus
        .blocks()
        .par_iter()
        .zip(e.blocks().par_iter())
        .zip(split.chi_plus.blocks().par_iter().zip(split.chi_minus.blocks().par_iter()))
        .map(|((md, eb), (cp, cm))| -> Result<f64> {
            let m = md.nrows();
            let n = (steps + 1) * m;
            let kfwd = duhamel_matrix(eb, steps, dt);
            // backward integral: reverse time, integrate, reverse back
            let mut rev = zeros(n, n);
            for j in 0..=steps {
                rev.view_mut((j * m, (steps - j) * m), (m, m)).copy_from(&eye(m));
            }
            let kbwd = &rev * &kfwd * &rev;
            let s = &kfwd * kron_eye(steps, cp) - &kbwd * kron_eye(steps, cm);
            let dtm = crate::linalg::kron(&difference_matrix(steps, dt), &eye(m));
            let a = kron_eye(steps, md);
            let sw = weight_matrix(grid, m, 0.5);
            let id = eye(n);
            let norm_ops = |ord: usize| -> Vec<CMat> {
                // u, d_t u, |A| u for ord 1; adds d_t^2, |A| d_t, |A|^2 for ord 2
                let mut v = vec![id.clone(), dtm.clone(), a.clone()];
                if ord == 2 {
                    v.push(&dtm * &dtm);
                    v.push(&a * &dtm);
                    v.push(&a * &a);
                }
                v
            };
            let gram = |ops: &[CMat], post: &CMat| -> CMat {
                ops.iter().fold(zeros(n, n), |acc, o| {
                    let x = &sw * o * post;
                    acc + x.adjoint() * x
                })
            };
            let num = gram(&norm_ops(k + 1), &s);
            let den = if k == 0 { gram(&[id.clone()], &id) } else { gram(&norm_ops(1), &id) };
            hermitian_pencil_extremes(&num, &den).map(|p| p.1.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Least-squares helper used by callers that need `S_{0,r} sigma_0^{-1} f` directly.
pub fn solution_with_sigma0(f: &CylinderField, split: &SpectralSplit, sigma0: &CMat) -> Result<CylinderField> {
    let inv = crate::fredpair::fiber_operator(split, sigma0)?.map(inverse)?;
    solution_operator(&f.map(&inv)?, split)
}

/// Pseudo-inverse solve on stacked blocks, exposed for diagnostics.
pub fn least_squares(a: &CMat, b: &CMat) -> CMat {
    pinv(a, CYLINDER_RANK_TOL * spectral_norm(a).max(1.0)) * b
}
