//! The three model operators: a boundary operator with a non-diagonalisable
//! symbol, the tilted Dirac operator on the circle and the Rarita-Schwinger
//! operator on the flat two-torus.

use std::f64::consts::PI;

use crate::discretize::{Base, FourierOperator};
use crate::error::{Error, Result};
use crate::linalg::{c, cr, hstack, inverse, kron, CMat, CVec, Tolerances, C64, I};
use crate::symbols::{adapted_symbol, SymbolField};

/// `[[-i, 1], [0, -i]] dt + I dx`, whose adapted symbol is `xi [[i, 1], [0, i]]`.
pub fn nondiag_sigma_d() -> SymbolField {
    let dt = CMat::from_row_slice(2, 2, &[-I, cr(1.0), cr(0.0), -I]);
    SymbolField::constant(1, 2.0 * PI, vec![("dt", dt), ("dx", CMat::identity(2, 2))])
}

pub fn nondiag_sigma_a() -> SymbolField {
    let b = CMat::from_row_slice(2, 2, &[I, cr(1.0), cr(0.0), I]);
    SymbolField::constant(1, 2.0 * PI, vec![("dx", b)])
}

/// `A = [[i, 1], [0, i]] d/dx` on the circle; block `[[-k, ik], [0, -k]]` for mode `k`.
pub fn build_nondiag(n: usize) -> Result<FourierOperator> {
    FourierOperator::from_symbol(&nondiag_sigma_a(), Base::circle(), n)
}

/// Dirac symbol on the cylinder over the circle: `dt -> [[0,-1],[1,0]]`, `dtheta -> [[0,i],[i,0]]`.
pub fn dirac_sigma_d() -> SymbolField {
    let dt = CMat::from_row_slice(2, 2, &[cr(0.0), cr(-1.0), cr(1.0), cr(0.0)]);
    let dth = CMat::from_row_slice(2, 2, &[cr(0.0), I, I, cr(0.0)]);
    SymbolField::constant(1, 2.0 * PI, vec![("dt", dt), ("dtheta", dth)])
}

/// Adapted symbol for the transversal `tau = dt + alpha dtheta`.
pub fn tilted_dirac_sigma_a(alpha: f64) -> Result<SymbolField> {
    adapted_symbol(&dirac_sigma_d(), &[1.0, alpha], &Tolerances::default())
}

/// Adapted operator of the Dirac operator for `tau = dt + alpha dtheta`:
/// `diag(1 - i alpha, 1 + i alpha) A_0 / (1 + alpha^2)` with `A_0 = diag(i, -i) d/dtheta`.
pub fn build_tilted_dirac(alpha: f64, n: usize) -> Result<FourierOperator> {
    FourierOperator::from_symbol(&tilted_dirac_sigma_a(alpha)?, Base::circle(), n)
}

/// Closed-form spectrum `{(1 -+ i alpha) k / (1 + alpha^2) : |k| <= n}`.
pub fn tilted_dirac_spectrum(alpha: f64, n: usize) -> Vec<C64> {
    let d = 1.0 + alpha * alpha;
    let n = n as i64;
    let mut out = Vec::new();
    for k in -n..=n {
        let k = k as f64;
        out.push(c(k, -alpha * k) / d);
        out.push(c(k, alpha * k) / d);
    }
    crate::linalg::sort_complex(&mut out);
    out
}

/// Clifford multiplication on spinors of a three-manifold: `c(e_j) = i sigma_j`,
/// so `c(e_j)^2 = -1` and `e_1 e_2 e_3` acts as `+1`.
#[derive(Clone, Debug)]
pub struct CliffordModel {
    pub gammas: [CMat; 3],
}

impl Default for CliffordModel {
    fn default() -> Self {
        let s1 = CMat::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)]);
        let s2 = CMat::from_row_slice(2, 2, &[cr(0.0), -I, I, cr(0.0)]);
        let s3 = CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)]);
        CliffordModel { gammas: [s1 * I, s2 * I, s3 * I] }
    }
}

impl CliffordModel {
    /// Clifford multiplication by the vector `xi`.
    pub fn mult(&self, xi: &[f64; 3]) -> CMat {
        &self.gammas[0] * cr(xi[0]) + &self.gammas[1] * cr(xi[1]) + &self.gammas[2] * cr(xi[2])
    }

    pub fn volume_element(&self) -> CMat {
        &self.gammas[0] * &self.gammas[1] * &self.gammas[2]
    }
}

/// Three-halves spinors inside `S (x) T` for `n = 3`.
///
/// Coordinates on `S (x) T` stack the spinor components `[phi_1; phi_2; phi_3]`
/// of `Phi = sum_j phi_j (x) e_j`.
#[derive(Clone, Debug)]
pub struct RaritaSchwingerModel {
    pub clifford: CliffordModel,
    /// Contraction `gamma(Phi) = sum_j e_j . phi_j` (2 x 6).
    pub gamma: CMat,
    /// Embedding `iota(phi) = -(1/3) sum_j e_j . phi (x) e_j` (6 x 2).
    pub iota: CMat,
    /// `1 - iota gamma` (6 x 6).
    pub pi32: CMat,
    /// Orthonormal basis of `ker gamma` (6 x 4).
    pub basis: CMat,
}

impl RaritaSchwingerModel {
    pub fn new() -> Result<Self> {
        let clifford = CliffordModel::default();
        let g = &clifford.gammas;
        let gamma = hstack(&[&g[0], &g[1], &g[2]]);
        let mut iota = CMat::zeros(6, 2);
        for j in 0..3 {
            iota.view_mut((2 * j, 0), (2, 2)).copy_from(&(&g[j] * cr(-1.0 / 3.0)));
        }
        let pi32 = CMat::identity(6, 6) - &iota * &gamma;
        let basis = gram_schmidt_columns(&pi32, 1e-10);
        if basis.ncols() != 4 {
            return Err(Error::ProjectorConstructionFailure(basis.ncols()));
        }
        Ok(RaritaSchwingerModel { clifford, gamma, iota, pi32, basis })
    }

    /// `sigma_D(xi)` on `S^{3/2}` in the orthonormal basis: `pi (xi (x) 1)` restricted.
    pub fn sigma_d(&self, xi: &[f64; 3]) -> CMat {
        let cx = kron(&CMat::identity(3, 3), &self.clifford.mult(xi));
        self.basis.adjoint() * cx * &self.basis
    }

    /// `(xi (x) 1) Phi + 2 iota(Phi(xi))` on the full `S (x) T`.
    pub fn sigma_d_literal(&self, xi: &[f64; 3]) -> CMat {
        let cx = kron(&CMat::identity(3, 3), &self.clifford.mult(xi));
        // Phi(xi) = sum_j xi_j phi_j
        let mut eval = CMat::zeros(2, 6);
        for j in 0..3 {
            eval.view_mut((0, 2 * j), (2, 2)).copy_from(&(CMat::identity(2, 2) * cr(xi[j])));
        }
        cx + &self.iota * eval * cr(2.0)
    }

    /// `sigma_D(e_3)^{-1} sigma_D(xi)` for `xi` tangent to the boundary `{e_1, e_2}`.
    pub fn sigma_a(&self, xi: &[f64; 2]) -> Result<CMat> {
        let tau = inverse(&self.sigma_d(&[0.0, 0.0, 1.0]))?;
        Ok(tau * self.sigma_d(&[xi[0], xi[1], 0.0]))
    }
}

/// Gram-Schmidt on the columns of `m` in order, keeping those whose residual exceeds `tol`.
pub fn gram_schmidt_columns(m: &CMat, tol: f64) -> CMat {
    let mut cols: Vec<CVec> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dotc(&v);
                v -= q * p;
            }
        }
        let nv = v.norm();
        if nv > tol {
            cols.push(v / cr(nv));
        }
    }
    let mut out = CMat::zeros(m.nrows(), cols.len());
    for (j, q) in cols.iter().enumerate() {
        out.set_column(j, q);
    }
    out
}

/// Symbol fields of the Rarita-Schwinger operator: `sigma_D` over `(dx^1, dx^2, dt)`
/// written with the normal direction first, and the adapted `sigma_A` over `(dx^1, dx^2)`.
pub fn build_rs_symbols() -> Result<(SymbolField, SymbolField)> {
    let rs = RaritaSchwingerModel::new()?;
    let sd = SymbolField::constant(
        2,
        1.0,
        vec![
            ("dt", rs.sigma_d(&[0.0, 0.0, 1.0])),
            ("dx1", rs.sigma_d(&[1.0, 0.0, 0.0])),
            ("dx2", rs.sigma_d(&[0.0, 1.0, 0.0])),
        ],
    );
    let sa = adapted_symbol(&sd, &[1.0, 0.0, 0.0], &Tolerances::default())?;
    Ok((sd, sa))
}

/// `A = sigma_A(dx^1) d_1 + sigma_A(dx^2) d_2` on `R^2 / Z^2`; mode block `2 pi i sigma_A(k)`.
pub fn build_rs_torus(n: usize) -> Result<FourierOperator> {
    let (_, sa) = build_rs_symbols()?;
    FourierOperator::from_symbol(&sa, Base::unit_torus(), n)
}

/// Golden spectrum table: `mode,re,im` per eigenvalue, sorted within each mode.
pub fn spectrum_csv(op: &FourierOperator) -> Result<String> {
    let mut s = String::from("k1,k2,re,im\n");
    for (blk, mode) in op.matrix.blocks().iter().zip(op.block_modes()) {
        let ev = crate::symbols::eigenvalues(blk)?;
        let k = mode.unwrap_or([0, 0]);
        for l in ev {
            s.push_str(&format!("{},{},{:.12e},{:.12e}\n", k[0], k[1], clean(l.re), clean(l.im)));
        }
    }
    Ok(s)
}

fn clean(x: f64) -> f64 {
    if x.abs() < 1e-13 {
        0.0
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::symbol_eig_structure;

    #[test]
    fn clifford_relations() {
        let cl = CliffordModel::default();
        for i in 0..3 {
            for j in 0..3 {
                let ac = &cl.gammas[i] * &cl.gammas[j] + &cl.gammas[j] * &cl.gammas[i];
                let expect = if i == j { CMat::identity(2, 2) * cr(-2.0) } else { CMat::zeros(2, 2) };
                assert!((ac - expect).norm() < 1e-15);
            }
        }
        assert!((cl.volume_element() - CMat::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn rs_model_invariants() {
        let rs = RaritaSchwingerModel::new().unwrap();
        assert!((&rs.gamma * &rs.iota - CMat::identity(2, 2)).norm() < 1e-14);
        assert!((rs.iota.adjoint() - &rs.gamma * cr(1.0 / 3.0)).norm() < 1e-14);
        assert!((&rs.pi32 * &rs.pi32 - &rs.pi32).norm() < 1e-14);
        assert!((rs.pi32.adjoint() - &rs.pi32).norm() < 1e-14);
        assert!((&rs.gamma * &rs.basis).norm() < 1e-14);
        // literal symbol formula agrees with the projected Clifford multiplication
        let xi = [0.3, -0.7, 0.2];
        let lit = rs.basis.adjoint() * rs.sigma_d_literal(&xi) * &rs.basis;
        assert!((lit - rs.sigma_d(&xi)).norm() < 1e-14);
        // and the literal one maps ker gamma into itself
        let img = rs.sigma_d_literal(&xi) * &rs.basis;
        assert!((&rs.gamma * img).norm() < 1e-14);
    }

    #[test]
    fn rs_symbol_square() {
        let rs = RaritaSchwingerModel::new().unwrap();
        let xi = [0.6, 0.0, 0.8];
        let sq = rs.sigma_d(&xi) * rs.sigma_d(&xi);
        let mut ev: Vec<f64> = crate::symbols::eigenvalues(&sq).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-1.0, -1.0, -1.0 / 9.0, -1.0 / 9.0];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn rs_adapted_symbol_jordan() {
        let rs = RaritaSchwingerModel::new().unwrap();
        let m = rs.sigma_a(&[1.0, 0.0]).unwrap();
        let cl = symbol_eig_structure(&m, &Tolerances::default()).unwrap();
        assert_eq!(cl.len(), 2);
        for c in &cl {
            assert!((c.value.norm() - 1.0).abs() < 1e-8 && c.value.re.abs() < 1e-8);
            assert_eq!((c.algebraic, c.geometric), (2, 1));
        }
    }

    #[test]
    fn tilted_dirac_blocks() {
        let op = build_tilted_dirac(1.0, 3).unwrap();
        for (blk, k) in op.matrix.blocks().iter().zip(&op.modes) {
            let k = k[0] as f64;
            let expect = CMat::from_diagonal(&CVec::from_vec(vec![c(-k, k) / 2.0, c(k, k) / 2.0]));
            assert!((blk - expect).norm() < 1e-14);
        }
    }
}
