//! Holomorphic functions of a matrix through a reordered Schur form.
//!
//! Eigenvalues are grouped into clusters, each cluster is made contiguous
//! on the diagonal, diagonal blocks are evaluated by a Taylor series about
//! the cluster mean and the off-diagonal blocks follow from the block
//! Parlett recurrence.

use super::{cr, sylvester_upper, zeros, CMat, SchurForm, Tolerances, C64, EPS};
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// A scalar function holomorphic near the spectrum it is applied to.
pub trait ScalarFn: Sync {
    fn eval(&self, z: C64) -> C64;

    /// Radius of a disc about `z` on which the function is holomorphic.
    fn radius(&self, z: C64) -> f64 {
        (0.5 * z.norm()).max(1e-8)
    }

    /// Taylor coefficients `f^(n)(z) / n!` for `n < count`.
    fn taylor(&self, z: C64, count: usize) -> Vec<C64> {
        cauchy_taylor(|w| self.eval(w), z, self.radius(z), count)
    }
}

/// Taylor coefficients from the trapezoid rule on a circle of radius `rho`.
pub fn cauchy_taylor(f: impl Fn(C64) -> C64, z: C64, rho: f64, count: usize) -> Vec<C64> {
    let p = (2 * count).max(64);
    let samples: Vec<C64> = (0..p)
        .map(|k| f(z + C64::from_polar(rho, 2.0 * PI * k as f64 / p as f64)))
        .collect();
    (0..count)
        .map(|n| {
            let mut s = C64::new(0.0, 0.0);
            for (k, v) in samples.iter().enumerate() {
                s += v * C64::from_polar(1.0, -2.0 * PI * (n * k) as f64 / p as f64);
            }
            s / (p as f64 * rho.powi(n as i32))
        })
        .collect()
}

/// Principal power `z^s`.
#[derive(Clone, Copy, Debug)]
pub struct Power(pub f64);

impl ScalarFn for Power {
    fn eval(&self, z: C64) -> C64 {
        if z.norm() == 0.0 {
            return if self.0 == 0.0 { cr(1.0) } else { cr(0.0) };
        }
        z.powf(self.0)
    }

    fn taylor(&self, z: C64, count: usize) -> Vec<C64> {
        let s = self.0;
        let mut out = Vec::with_capacity(count);
        let mut binom = 1.0;
        for n in 0..count {
            out.push(cr(binom) * (z.ln() * cr(s - n as f64)).exp());
            binom *= (s - n as f64) / (n as f64 + 1.0);
        }
        out
    }
}

/// `exp(-t z)` for complex `t`.
#[derive(Clone, Copy, Debug)]
pub struct ExpNeg(pub C64);

impl ExpNeg {
    pub fn real(t: f64) -> Self {
        ExpNeg(cr(t))
    }
}

impl ScalarFn for ExpNeg {
    fn eval(&self, z: C64) -> C64 {
        (-z * self.0).exp()
    }

    fn radius(&self, z: C64) -> f64 {
        1.0 + z.norm()
    }

    fn taylor(&self, z: C64, count: usize) -> Vec<C64> {
        let base = self.eval(z);
        let mut out = Vec::with_capacity(count);
        let mut term = cr(1.0);
        for n in 0..count {
            out.push(base * term);
            term *= -self.0 / (n as f64 + 1.0);
        }
        out
    }
}

/// `(t z)^alpha exp(-t z)`.
#[derive(Clone, Copy, Debug)]
pub struct PsiAlpha {
    pub alpha: f64,
    pub t: f64,
}

impl ScalarFn for PsiAlpha {
    fn eval(&self, z: C64) -> C64 {
        let w = z * self.t;
        if w.norm() == 0.0 {
            return cr(0.0);
        }
        (w.ln() * self.alpha - w).exp()
    }

    fn taylor(&self, z: C64, count: usize) -> Vec<C64> {
        let p = Power(self.alpha).taylor(z, count);
        let e = ExpNeg::real(self.t).taylor(z, count);
        let scale = self.t.powf(self.alpha);
        (0..count)
            .map(|n| (0..=n).map(|k| p[k] * e[n - k]).sum::<C64>() * scale)
            .collect()
    }
}

/// Closure-backed scalar function with a fixed relative holomorphy radius.
pub struct FnOf<F: Fn(C64) -> C64 + Sync> {
    pub f: F,
    pub radius_frac: f64,
}

impl<F: Fn(C64) -> C64 + Sync> ScalarFn for FnOf<F> {
    fn eval(&self, z: C64) -> C64 {
        (self.f)(z)
    }

    fn radius(&self, z: C64) -> f64 {
        (self.radius_frac * z.norm()).max(1e-8)
    }
}

/// Clustered Schur form ready for repeated function evaluation.
#[derive(Clone, Debug)]
pub struct FunctionalCalculus {
    pub schur: SchurForm,
    /// Block boundaries on the diagonal, `starts[b]..starts[b + 1]`.
    starts: Vec<usize>,
    centers: Vec<C64>,
}

const CLUSTER_REL: f64 = 0.05;

impl FunctionalCalculus {
    pub fn new(a: &CMat, tols: &Tolerances) -> Result<Self> {
        let schur = SchurForm::new(a)?;
        Self::from_schur(schur, tols)
    }

    /// Cluster and reorder an existing Schur form.
    pub fn from_schur(mut schur: SchurForm, tols: &Tolerances) -> Result<Self> {
        let n = schur.dim();
        let ev = schur.eigenvalues();
        let anorm = schur.t.norm();
        let floor = tols.jordan_floor * EPS.sqrt() * anorm;
        // single-linkage clustering with ids in order of first appearance
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
                    if id[q] == usize::MAX {
                        let d = (ev[p] - ev[q]).norm();
                        let scale = ev[p].norm().max(ev[q].norm());
                        if d <= CLUSTER_REL * scale || d <= floor {
                            id[q] = next;
                            stack.push(q);
                        }
                    }
                }
            }
            next += 1;
        }
        schur.reorder_by_key(&id);
        let mut sorted = id.clone();
        sorted.sort_unstable();
        let mut starts = vec![0];
        for i in 1..n {
            if sorted[i] != sorted[i - 1] {
                starts.push(i);
            }
        }
        if n > 0 {
            starts.push(n);
        }
        let centers = starts
            .windows(2)
            .map(|w| {
                let s: C64 = (w[0]..w[1]).map(|i| schur.t[(i, i)]).sum();
                s / (w[1] - w[0]) as f64
            })
            .collect();
        Ok(FunctionalCalculus { schur, starts, centers })
    }

    pub fn dim(&self) -> usize {
        self.schur.dim()
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        self.schur.eigenvalues()
    }

    fn block(&self, m: &CMat, bi: usize, bj: usize) -> CMat {
        let (r0, r1) = (self.starts[bi], self.starts[bi + 1]);
        let (c0, c1) = (self.starts[bj], self.starts[bj + 1]);
        m.view((r0, c0), (r1 - r0, c1 - c0)).into_owned()
    }

    fn diagonal_block(&self, f: &dyn ScalarFn, b: usize) -> Result<CMat> {
        let tb = self.block(&self.schur.t, b, b);
        let m = tb.nrows();
        if m == 1 {
            return Ok(CMat::from_element(1, 1, f.eval(tb[(0, 0)])));
        }
        let mu = self.centers[b];
        let mut nil = tb;
        for i in 0..m {
            nil[(i, i)] -= mu;
        }
        let count = 40 + 4 * m;
        let coef = f.taylor(mu, count);
        let mut out = CMat::identity(m, m) * coef[0];
        let mut pow = CMat::identity(m, m);
        let mut quiet = 0;
        for a in coef.iter().skip(1) {
            pow = &pow * &nil;
            let term = &pow * *a;
            let tn = term.norm();
            out += term;
            if tn <= EPS * out.norm() {
                quiet += 1;
                if quiet >= 3 {
                    return Ok(out);
                }
            } else {
                quiet = 0;
            }
        }
        if pow.norm() < EPS {
            Ok(out)
        } else {
            Err(Error::ClusterAmbiguity(format!("Taylor series did not settle for cluster at {mu}")))
        }
    }

    /// `f(t)` for the triangular factor.
    pub fn eval_triangular(&self, f: &dyn ScalarFn) -> Result<CMat> {
        let n = self.dim();
        let nb = self.centers.len();
        let mut fm = zeros(n, n);
        let t = &self.schur.t;
        for j in 0..nb {
            let fjj = self.diagonal_block(f, j)?;
            let (c0, c1) = (self.starts[j], self.starts[j + 1]);
            fm.view_mut((c0, c0), (c1 - c0, c1 - c0)).copy_from(&fjj);
            for i in (0..j).rev() {
                let tij = self.block(t, i, j);
                let fii = self.block(&fm, i, i);
                let mut rhs = &fii * &tij - &tij * &fjj;
                for k in (i + 1)..j {
                    rhs += self.block(&fm, i, k) * self.block(t, k, j) - self.block(t, i, k) * self.block(&fm, k, j);
                }
                let x = sylvester_upper(&self.block(t, i, i), &self.block(t, j, j), &rhs)?;
                let r0 = self.starts[i];
                fm.view_mut((r0, c0), x.shape()).copy_from(&x);
            }
        }
        Ok(fm)
    }

    pub fn eval(&self, f: &dyn ScalarFn) -> Result<CMat> {
        let ft = self.eval_triangular(f)?;
        Ok(&self.schur.q * ft * self.schur.q.adjoint())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eye};

    fn sample() -> CMat {
        CMat::from_fn(6, 6, |i, j| {
            let d = if i == j { 3.0 + i as f64 } else { 0.0 };
            c(d + 0.2 * ((i + 2 * j) % 5) as f64, 0.1 * ((i * j) % 3) as f64)
        })
    }

    #[test]
    fn exp_matches_nalgebra() {
        let a = sample();
        let fc = FunctionalCalculus::new(&a, &Tolerances::default()).unwrap();
        let ours = fc.eval(&ExpNeg::real(0.7)).unwrap();
        let reference = (&a * cr(-0.7)).exp();
        assert!((ours - &reference).norm() < 1e-11 * reference.norm());
    }

    #[test]
    fn square_root_squares_back() {
        let a = sample();
        let fc = FunctionalCalculus::new(&a, &Tolerances::default()).unwrap();
        let r = fc.eval(&Power(0.5)).unwrap();
        assert!((&r * &r - &a).norm() < 1e-11 * a.norm());
    }

    #[test]
    fn jordan_block_derivative() {
        // f(J) for J = [[l, 1], [0, l]] is [[f(l), f'(l)], [0, f(l)]]
        let l = c(2.0, 0.5);
        let j = CMat::from_row_slice(2, 2, &[l, cr(1.0), cr(0.0), l]);
        let fc = FunctionalCalculus::new(&j, &Tolerances::default()).unwrap();
        let s = 0.3;
        let f = fc.eval(&Power(s)).unwrap();
        let deriv = l.powf(s - 1.0) * s;
        assert!((f[(0, 1)] - deriv).norm() < 1e-12);
        assert!((f[(0, 0)] - l.powf(s)).norm() < 1e-12);
    }

    #[test]
    fn cauchy_fallback_agrees_with_closed_form() {
        let z = c(1.5, -0.4);
        let closed = Power(-0.5).taylor(z, 6);
        let circ = cauchy_taylor(|w| w.powf(-0.5), z, 0.5 * z.norm(), 6);
        for (a, b) in closed.iter().zip(&circ) {
            assert!((a - b).norm() < 1e-12);
        }
        let psi = PsiAlpha { alpha: 0.5, t: 0.8 };
        let closed = psi.taylor(z, 6);
        let circ = cauchy_taylor(|w| psi.eval(w), z, 0.5 * z.norm(), 6);
        for (a, b) in closed.iter().zip(&circ) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn identity_function_is_identity() {
        let a = sample();
        let fc = FunctionalCalculus::new(&a, &Tolerances::default()).unwrap();
        let f = FnOf { f: |z: C64| z, radius_frac: 0.5 };
        assert!((fc.eval(&f).unwrap() - &a).norm() < 1e-11 * a.norm());
        let g = fc.eval(&Power(0.0)).unwrap();
        assert!((g - eye(6)).norm() < 1e-12);
    }
}
