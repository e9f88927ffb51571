use super::{eye, zeros, CMat, C64};
use crate::error::{Error, Result};

/// Complex Schur form `a = q t q^H` with `t` upper triangular.
#[derive(Clone, Debug)]
pub struct SchurForm {
    pub q: CMat,
    pub t: CMat,
}

impl SchurForm {
    pub fn new(a: &CMat) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if n == 0 {
            return Ok(SchurForm { q: zeros(0, 0), t: zeros(0, 0) });
        }
        if n == 1 {
            return Ok(SchurForm { q: eye(1), t: a.clone() });
        }
        let (q, mut t) = match nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 200 * n) {
            Some(s) => s.unpack(),
            None => Self::retry_rotated(a)?,
        };
        for j in 0..n {
            for i in (j + 1)..n {
                t[(i, j)] = C64::new(0.0, 0.0);
            }
        }
        Ok(SchurForm { q, t })
    }

    /// QR iteration can stall on exactly defective input; a fixed random unitary
    /// similarity breaks the symmetry that causes it.
    fn retry_rotated(a: &CMat) -> Result<(CMat, CMat)> {
        let n = a.nrows();
        for attempt in 0..4 {
            let g = crate::rng::complex_matrix(&mut crate::rng::seeded(0x5c4u64, attempt), n, n);
            let u = g.qr().q();
            let b = u.adjoint() * a * &u;
            if let Some(s) = nalgebra::Schur::try_new(b, f64::EPSILON, 1000 * n) {
                let (q, t) = s.unpack();
                return Ok((u * q, t));
            }
        }
        Err(Error::NoConvergence)
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.t[(i, i)]).collect()
    }

    /// Exchange diagonal entries `k` and `k + 1` by a unitary rotation.
    pub fn swap(&mut self, k: usize) {
        let n = self.dim();
        let t11 = self.t[(k, k)];
        let t22 = self.t[(k + 1, k + 1)];
        let t12 = self.t[(k, k + 1)];
        let v0 = t12;
        let v1 = t22 - t11;
        let nrm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
        if nrm == 0.0 {
            return;
        }
        let (a, b) = (v0 / nrm, v1 / nrm);
        // z = [[a, -conj(b)], [b, conj(a)]]
        let (za, zb, zc, zd) = (a, -b.conj(), b, a.conj());
        for j in 0..n {
            let x = self.t[(k, j)];
            let y = self.t[(k + 1, j)];
            self.t[(k, j)] = za.conj() * x + zc.conj() * y;
            self.t[(k + 1, j)] = zb.conj() * x + zd.conj() * y;
        }
        for i in 0..n {
            let x = self.t[(i, k)];
            let y = self.t[(i, k + 1)];
            self.t[(i, k)] = x * za + y * zc;
            self.t[(i, k + 1)] = x * zb + y * zd;
            let x = self.q[(i, k)];
            let y = self.q[(i, k + 1)];
            self.q[(i, k)] = x * za + y * zc;
            self.q[(i, k + 1)] = x * zb + y * zd;
        }
        self.t[(k + 1, k)] = C64::new(0.0, 0.0);
        self.t[(k, k)] = t22;
        self.t[(k + 1, k + 1)] = t11;
    }

    /// Stable reorder so that diagonal keys ascend. Returns the permuted keys.
    pub fn reorder_by_key(&mut self, keys: &[usize]) -> Vec<usize> {
        let mut keys = keys.to_vec();
        for i in 1..keys.len() {
            let mut j = i;
            while j > 0 && keys[j - 1] > keys[j] {
                self.swap(j - 1);
                keys.swap(j - 1, j);
                j -= 1;
            }
        }
        keys
    }

    pub fn reconstruct(&self) -> CMat {
        &self.q * &self.t * self.q.adjoint()
    }
}

/// Solve `a x - x b = c` for upper triangular `a` (m x m) and `b` (n x n).
pub fn sylvester_upper(a: &CMat, b: &CMat, c: &CMat) -> Result<CMat> {
    let m = a.nrows();
    let n = b.nrows();
    let mut x = zeros(m, n);
    let scale = a.norm().max(b.norm()).max(1e-300);
    for j in 0..n {
        for i in (0..m).rev() {
            let mut s = c[(i, j)];
            for p in (i + 1)..m {
                s -= a[(i, p)] * x[(p, j)];
            }
            for p in 0..j {
                s += x[(i, p)] * b[(p, j)];
            }
            let d = a[(i, i)] - b[(j, j)];
            if d.norm() <= f64::EPSILON * scale {
                return Err(Error::ClusterAmbiguity(format!(
                    "Sylvester separation {:e} between {} and {}",
                    d.norm(),
                    a[(i, i)],
                    b[(j, j)]
                )));
            }
            x[(i, j)] = s / d;
        }
    }
    Ok(x)
}

/// Spectral projector onto the invariant subspace for eigenvalues with
/// `select(lambda) == true`, along the complementary one.
///
/// Returns the projector, an orthonormal basis of its range and the rank.
pub fn invariant_projector(
    a: &CMat,
    select: impl Fn(C64) -> bool,
) -> Result<(CMat, CMat, usize)> {
    let n = a.nrows();
    let mut s = SchurForm::new(a)?;
    let keys: Vec<usize> = s.eigenvalues().iter().map(|&l| if select(l) { 0 } else { 1 }).collect();
    let k = keys.iter().filter(|&&x| x == 0).count();
    s.reorder_by_key(&keys);
    let basis = s.q.columns(0, k).into_owned();
    if k == 0 {
        return Ok((zeros(n, n), basis, 0));
    }
    if k == n {
        return Ok((eye(n), basis, n));
    }
    let t11 = s.t.view((0, 0), (k, k)).into_owned();
    let t22 = s.t.view((k, k), (n - k, n - k)).into_owned();
    let t12 = s.t.view((0, k), (k, n - k)).into_owned();
    let y = sylvester_upper(&t11, &t22, &t12)?;
    let mut core = zeros(n, n);
    core.view_mut((0, 0), (k, k)).copy_from(&eye(k));
    core.view_mut((0, k), (k, n - k)).copy_from(&y);
    Ok((&s.q * core * s.q.adjoint(), basis, k))
}
