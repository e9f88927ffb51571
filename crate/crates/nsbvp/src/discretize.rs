//! Fourier truncation of first-order operators on the circle and the flat torus.
//!
//! Basis: `exp(i <omega(k), x>) / sqrt(vol)` tensored with the standard
//! fiber basis, ordered lexicographically by `(k, fiber index)`. The basis is
//! orthonormal, so the adjoint is the conjugate transpose.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{c, BlockDiag, CMat, CVec, C64};
use crate::symbols::{FourierMatrix, ModeIndex, SymbolField};

#[derive(Clone, Debug, PartialEq)]
pub enum Base {
    /// Circle of the given circumference.
    Circle { length: f64 },
    /// `R^2 / Gamma`; columns of `lattice` generate `Gamma`.
    Torus { lattice: [[f64; 2]; 2] },
}

impl Base {
    pub fn circle() -> Self {
        Base::Circle { length: 2.0 * PI }
    }

    pub fn unit_torus() -> Self {
        Base::Torus { lattice: [[1.0, 0.0], [0.0, 1.0]] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Base::Circle { .. } => 1,
            Base::Torus { .. } => 2,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Base::Circle { length } => *length,
            Base::Torus { lattice: g } => (g[0][0] * g[1][1] - g[0][1] * g[1][0]).abs(),
        }
    }

    /// Angular frequency vector of mode `k`: `2 pi k / L` on the circle,
    /// `2 pi k` with `k` expressed in the dual lattice on the torus.
    pub fn frequency(&self, k: ModeIndex) -> [f64; 2] {
        match self {
            Base::Circle { length } => [2.0 * PI * k[0] as f64 / length, 0.0],
            Base::Torus { lattice: g } => {
                // dual basis vectors are the rows of the inverse lattice matrix
                let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
                let inv_t = [[g[1][1] / det, -g[1][0] / det], [-g[0][1] / det, g[0][0] / det]];
                let k0 = k[0] as f64;
                let k1 = k[1] as f64;
                [
                    2.0 * PI * (k0 * inv_t[0][0] + k1 * inv_t[0][1]),
                    2.0 * PI * (k0 * inv_t[1][0] + k1 * inv_t[1][1]),
                ]
            }
        }
    }

    /// Modes with `|k_i| <= n`, in lexicographic order.
    pub fn modes(&self, n: usize) -> Vec<ModeIndex> {
        let n = n as i64;
        match self {
            Base::Circle { .. } => (-n..=n).map(|k| [k, 0]).collect(),
            Base::Torus { .. } => (-n..=n).flat_map(|a| (-n..=n).map(move |b| [a, b])).collect(),
        }
    }

    /// `(1 + |omega(k)|^2)^{1/2}`.
    pub fn japanese_bracket(&self, k: ModeIndex) -> f64 {
        let w = self.frequency(k);
        (1.0 + w[0] * w[0] + w[1] * w[1]).sqrt()
    }
}

/// Coefficients of `A = sum_j B_j(x) d_j + C(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorCoeffs {
    pub fiber_dim: usize,
    pub first_order: Vec<FourierMatrix>,
    pub zero_order: FourierMatrix,
}

impl OperatorCoeffs {
    pub fn from_symbol(sym: &SymbolField) -> Self {
        OperatorCoeffs {
            fiber_dim: sym.fiber_dim,
            first_order: sym.directions.iter().map(|d| d.coeff.clone()).collect(),
            zero_order: sym.zero_order.clone(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.first_order.iter().all(FourierMatrix::is_constant) && self.zero_order.is_constant()
    }

    pub fn bandwidth(&self) -> usize {
        self.first_order
            .iter()
            .map(FourierMatrix::bandwidth)
            .chain(std::iter::once(self.zero_order.bandwidth()))
            .max()
            .unwrap_or(0)
    }

    /// Matrix mapping the mode-`k` coefficient to the mode-`k + p` coefficient.
    fn coupling(&self, base: &Base, p: ModeIndex, k: ModeIndex) -> CMat {
        let m = self.fiber_dim;
        let w = base.frequency(k);
        let mut out = CMat::zeros(m, m);
        for (j, f) in self.first_order.iter().enumerate() {
            for (q, b) in &f.terms {
                if *q == p {
                    out += b * c(0.0, w[j]);
                }
            }
        }
        for (q, cm) in &self.zero_order.terms {
            if *q == p {
                out += cm;
            }
        }
        out
    }

    /// Coefficients of the formal adjoint `-sum_j B_j^* d_j - sum_j (d_j B_j^*) + C^*`.
    pub fn adjoint(&self, base: &Base) -> Self {
        let first_order = self
            .first_order
            .iter()
            .map(|f| FourierMatrix { terms: f.terms.iter().map(|(p, b)| ([-p[0], -p[1]], -b.adjoint())).collect() })
            .collect();
        let mut zero: Vec<(ModeIndex, CMat)> =
            self.zero_order.terms.iter().map(|(p, cm)| ([-p[0], -p[1]], cm.adjoint())).collect();
        for (j, f) in self.first_order.iter().enumerate() {
            for (p, b) in &f.terms {
                let q = [-p[0], -p[1]];
                let w = base.frequency(q)[j];
                if w != 0.0 {
                    zero.push((q, -b.adjoint() * c(0.0, w)));
                }
            }
        }
        OperatorCoeffs { fiber_dim: self.fiber_dim, first_order, zero_order: FourierMatrix { terms: zero } }
    }
}

/// Truncated operator together with its assembled matrix.
#[derive(Clone, Debug)]
pub struct FourierOperator {
    pub base: Base,
    pub cutoff: usize,
    pub modes: Vec<ModeIndex>,
    pub coeffs: OperatorCoeffs,
    /// One block per mode for constant coefficients, one dense block otherwise.
    pub matrix: BlockDiag,
}

impl FourierOperator {
    pub fn assemble(coeffs: OperatorCoeffs, base: Base, n: usize) -> Result<Self> {
        if coeffs.first_order.len() != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: coeffs.first_order.len() });
        }
        let bw = coeffs.bandwidth();
        if bw > n {
            return Err(Error::BandwidthExceeded { bandwidth: bw, cutoff: n });
        }
        let modes = base.modes(n);
        let m = coeffs.fiber_dim;
        let matrix = if coeffs.is_constant() {
            BlockDiag::from_blocks(modes.iter().map(|&k| coeffs.coupling(&base, [0, 0], k)).collect())
        } else {
            let idx = |k: ModeIndex| modes.binary_search(&k).ok();
            let mut dense = CMat::zeros(m * modes.len(), m * modes.len());
            let mut shifts: Vec<ModeIndex> = coeffs
                .first_order
                .iter()
                .flat_map(|f| f.terms.iter().map(|(p, _)| *p))
                .chain(coeffs.zero_order.terms.iter().map(|(p, _)| *p))
                .collect();
            shifts.sort_unstable();
            shifts.dedup();
            for (col, &k) in modes.iter().enumerate() {
                for &p in &shifts {
                    if let Some(row) = idx([k[0] + p[0], k[1] + p[1]]) {
                        let blk = coeffs.coupling(&base, p, k);
                        let mut v = dense.view_mut((row * m, col * m), (m, m));
                        v += blk;
                    }
                }
            }
            BlockDiag::dense(dense)
        };
        Ok(FourierOperator { base, cutoff: n, modes, coeffs, matrix })
    }

    pub fn from_symbol(sym: &SymbolField, base: Base, n: usize) -> Result<Self> {
        Self::assemble(OperatorCoeffs::from_symbol(sym), base, n)
    }

    pub fn fiber_dim(&self) -> usize {
        self.coeffs.fiber_dim
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_blocked(&self) -> bool {
        self.modes.len() > 1 && self.matrix.blocks().len() == self.modes.len()
    }

    pub fn adjoint(&self) -> Result<Self> {
        let coeffs = self.coeffs.adjoint(&self.base);
        let mut op = Self::assemble(coeffs, self.base.clone(), self.cutoff)?;
        // the conjugate transpose is exact; use it so truncation edges agree bit for bit
        op.matrix = self.matrix.adjoint();
        Ok(op)
    }

    /// `A - r`.
    pub fn shifted(&self, r: f64) -> Self {
        let mut op = self.clone();
        op.matrix = self.matrix.shift(r);
        let m = self.fiber_dim();
        op.coeffs.zero_order.terms.push(([0, 0], CMat::identity(m, m) * c(-r, 0.0)));
        op
    }

    pub fn negated(&self) -> Self {
        let mut op = self.clone();
        op.matrix = self.matrix.scale(c(-1.0, 0.0));
        op.coeffs.first_order = op.coeffs.first_order.iter().map(|f| f.map(|b| -b)).collect();
        op.coeffs.zero_order = op.coeffs.zero_order.map(|b| -b);
        op
    }

    pub fn apply(&self, u: &CVec) -> Result<CVec> {
        self.matrix.apply(u)
    }

    pub fn to_dense(&self) -> CMat {
        self.matrix.to_dense()
    }

    /// Position of mode `k` in the ordering, if present.
    pub fn mode_position(&self, k: ModeIndex) -> Option<usize> {
        self.modes.binary_search(&k).ok()
    }

    /// Coefficient vector of `exp(i <omega(k), x>) v`.
    pub fn mode_vector(&self, k: ModeIndex, v: &CVec) -> Result<CVec> {
        let m = self.fiber_dim();
        if v.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: v.len() });
        }
        let pos = self.mode_position(k).ok_or_else(|| Error::Invalid(format!("mode {k:?} outside cutoff")))?;
        let mut u = CVec::zeros(self.dim());
        u.rows_mut(pos * m, m).copy_from(v);
        Ok(u)
    }

    /// Mode label of every matrix block.
    pub fn block_modes(&self) -> Vec<Option<ModeIndex>> {
        if self.matrix.blocks().len() == self.modes.len() {
            self.modes.iter().map(|&k| Some(k)).collect()
        } else {
            vec![None]
        }
    }

    /// Nonzero entries as `row,col,re,im` lines with a header.
    pub fn export_csv(&self) -> String {
        let d = self.to_dense();
        let mut s = String::from("row,col,re,im\n");
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                let z: C64 = d[(i, j)];
                if z.re != 0.0 || z.im != 0.0 {
                    s.push_str(&format!("{i},{j},{:e},{:e}\n", z.re, z.im));
                }
            }
        }
        s
    }
}
