//! JSON inputs and CSV outputs.
//!
//! Complex numbers are `[re, im]` pairs; matrices are row-major nested arrays
//! of pairs. Modes are written as an integer on the circle or `[k1, k2]` on
//! the torus.

use serde::{Deserialize, Serialize};

use crate::cylinder::{CylinderField, TrigField};
use crate::discretize::{Base, FourierOperator, OperatorCoeffs};
use crate::error::{Error, Result};
use crate::examples::{build_nondiag, build_rs_torus, build_tilted_dirac};
use crate::fredpair::BoundaryCondition;
use crate::linalg::{CMat, CVec, C64};
use crate::speccalc::SpectralSplit;
use crate::symbols::{Direction, FourierMatrix, ModeIndex, SymbolField};

pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonMode {
    Circle(i64),
    Torus([i64; 2]),
}

impl JsonMode {
    pub fn index(self) -> ModeIndex {
        match self {
            JsonMode::Circle(k) => [k, 0],
            JsonMode::Torus(k) => k,
        }
    }
}

pub fn matrix_from_json(m: &JsonMatrix) -> Result<CMat> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::Invalid("ragged matrix".into()));
    }
    Ok(CMat::from_fn(rows, cols, |i, j| C64::new(m[i][j][0], m[i][j][1])))
}

pub fn matrix_to_json(m: &CMat) -> JsonMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn vector_from_json(v: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(|z| C64::new(z[0], z[1])))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JsonTerm {
    /// Fourier index `p` of the coefficient `C_p exp(i <p, x>)`.
    #[serde(default = "zero_mode")]
    pub mode: JsonMode,
    pub matrix: JsonMatrix,
}

fn zero_mode() -> JsonMode {
    JsonMode::Circle(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsonBase {
    Circle,
    Torus,
}

/// Operator given by its coefficients `A = sum_j B_j d_j + C`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorFile {
    pub base: JsonBase,
    /// Circumference on the circle (default `2 pi`); ignored on the torus.
    #[serde(default)]
    pub length: Option<f64>,
    pub fiber_dim: usize,
    pub first_order: Vec<Vec<JsonTerm>>,
    #[serde(default)]
    pub zero_order: Vec<JsonTerm>,
}

fn fourier_matrix(terms: &[JsonTerm], m: usize) -> Result<FourierMatrix> {
    let terms = terms
        .iter()
        .map(|t| {
            let mat = matrix_from_json(&t.matrix)?;
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::DimensionMismatch { expected: m, got: mat.nrows() });
            }
            Ok((t.mode.index(), mat))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FourierMatrix { terms })
}

impl OperatorFile {
    pub fn build(&self, n: usize) -> Result<FourierOperator> {
        if self.fiber_dim == 0 || n == 0 {
            return Err(Error::Invalid("operator needs fiber_dim > 0 and modes > 0".into()));
        }
        let base = match self.base {
            JsonBase::Circle => Base::Circle { length: self.length.unwrap_or(2.0 * std::f64::consts::PI) },
            JsonBase::Torus => Base::unit_torus(),
        };
        let coeffs = OperatorCoeffs {
            fiber_dim: self.fiber_dim,
            first_order: self.first_order.iter().map(|t| fourier_matrix(t, self.fiber_dim)).collect::<Result<_>>()?,
            zero_order: fourier_matrix(&self.zero_order, self.fiber_dim)?,
        };
        FourierOperator::assemble(coeffs, base, n)
    }
}

/// Symbol `sigma_A(x, xi) = sum_j xi_j B_j(x) + C(x)` of an assembled operator.
pub fn operator_symbol(op: &FourierOperator) -> SymbolField {
    let period = match op.base {
        Base::Circle { length } => length,
        Base::Torus { .. } => 1.0,
    };
    SymbolField {
        fiber_dim: op.fiber_dim(),
        base_dim: op.base.dim(),
        period,
        directions: op
            .coeffs
            .first_order
            .iter()
            .enumerate()
            .map(|(j, f)| Direction { name: format!("dx{}", j + 1), coeff: f.clone() })
            .collect(),
        zero_order: op.coeffs.zero_order.clone(),
    }
}

/// Built-in operators by name.
pub fn example_operator(name: &str, alpha: f64, n: usize) -> Result<FourierOperator> {
    if n == 0 {
        return Err(Error::Invalid("modes must be positive".into()));
    }
    match name {
        "nondiag" => build_nondiag(n),
        "tilted-dirac" => build_tilted_dirac(alpha, n),
        "dirac" => build_tilted_dirac(0.0, n),
        "rarita-schwinger" => build_rs_torus(n),
        other => Err(Error::Invalid(format!("unknown example '{other}'"))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JsonModeVector {
    pub mode: JsonMode,
    pub vector: Vec<[f64; 2]>,
}

fn columns_from_json(op: &FourierOperator, cols: &[Vec<JsonModeVector>]) -> Result<CMat> {
    let mut out = CMat::zeros(op.dim(), cols.len());
    for (j, parts) in cols.iter().enumerate() {
        let mut v = CVec::zeros(op.dim());
        for p in parts {
            v += op.mode_vector(p.mode.index(), &vector_from_json(&p.vector))?;
        }
        out.set_column(j, &v);
    }
    Ok(out)
}

/// Boundary condition file for the boundary analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BcFile {
    Aps,
    ApsModified { add: usize, remove: usize },
    Graph { epsilon: f64, order: f64, seed: u64 },
    PseudoLocal { projector: JsonMatrix },
    /// Each column is a sum of mode vectors.
    ExplicitBasis { columns: Vec<Vec<JsonModeVector>> },
}

impl BcFile {
    pub fn to_condition(&self, op: &FourierOperator) -> Result<BoundaryCondition> {
        Ok(match self {
            BcFile::Aps => BoundaryCondition::Aps,
            BcFile::ApsModified { add, remove } => BoundaryCondition::ApsModified { add: *add, remove: *remove },
            BcFile::Graph { epsilon, order, seed } => {
                BoundaryCondition::Graph { epsilon: *epsilon, order: *order, seed: *seed }
            }
            BcFile::PseudoLocal { projector } => BoundaryCondition::PseudoLocal { projector: matrix_from_json(projector)? },
            BcFile::ExplicitBasis { columns } => BoundaryCondition::ExplicitBasis { columns: columns_from_json(op, columns)? },
        })
    }
}

/// Condition at one end of the cylinder.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndCondition {
    /// `u in ran chi^-(A - cut)`.
    ChiMinus { cut: f64 },
    /// `u in ran chi^+(A - cut)`.
    ChiPlus { cut: f64 },
    ExplicitBasis { columns: Vec<Vec<JsonModeVector>> },
}

impl EndCondition {
    pub fn columns(&self, op: &FourierOperator) -> Result<CMat> {
        match self {
            EndCondition::ChiMinus { cut } => Ok(SpectralSplit::at(op, *cut)?.range_basis(false)),
            EndCondition::ChiPlus { cut } => Ok(SpectralSplit::at(op, *cut)?.range_basis(true)),
            EndCondition::ExplicitBasis { columns } => columns_from_json(op, columns),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceTerm {
    pub mode: JsonMode,
    #[serde(default)]
    pub freq: f64,
    pub vector: Vec<[f64; 2]>,
}

/// Cylinder problem; missing end conditions default to `chi^-` at `t = 0` and `chi^+` at `t = rho`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub sigma0: Option<JsonMatrix>,
    #[serde(default)]
    pub bc_left: Option<EndCondition>,
    #[serde(default)]
    pub bc_right: Option<EndCondition>,
    /// `f(t) = sum exp(i freq t) e_mode vector`.
    #[serde(default)]
    pub source: Vec<SourceTerm>,
}

impl ProblemFile {
    pub fn source_field(&self, op: &FourierOperator) -> Result<TrigField> {
        let mut freqs = Vec::new();
        let mut coeffs = Vec::new();
        for s in &self.source {
            freqs.push(s.freq);
            coeffs.push(op.mode_vector(s.mode.index(), &vector_from_json(&s.vector))?);
        }
        Ok(TrigField { freqs, coeffs })
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// `# {json}` header line followed by the body.
pub fn with_header<H: Serialize>(header: &H, body: &str) -> Result<String> {
    Ok(format!("# {}\n{body}", serde_json::to_string(header)?))
}

/// Solution table `t,mode,re,im` with one row per fiber component.
pub fn solution_csv(field: &CylinderField, op: &FourierOperator) -> String {
    let m = op.fiber_dim();
    let blocked = op.modes.len() * m == field.dim();
    let mut s = String::from("t,mode,component,re,im\n");
    for (j, v) in field.values.iter().enumerate() {
        let t = field.grid.t(j);
        for (i, z) in v.iter().enumerate() {
            let mode = if blocked { op.modes[i / m] } else { [i as i64, 0] };
            let label = match op.base {
                Base::Circle { .. } => format!("{}", mode[0]),
                Base::Torus { .. } => format!("{}:{}", mode[0], mode[1]),
            };
            s.push_str(&format!("{t:.12e},{label},{},{:.12e},{:.12e}\n", i % m, z.re, z.im));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_file_matches_builtin() {
        let text = r#"{"base":"circle","fiber_dim":2,
            "first_order":[[{"matrix":[[[0,1],[1,0]],[[0,0],[0,1]]]}]]}"#;
        let f: OperatorFile = serde_json::from_str(text).unwrap();
        let op = f.build(5).unwrap();
        let reference = build_nondiag(5).unwrap();
        assert!((op.to_dense() - reference.to_dense()).norm() < 1e-14);
    }

    #[test]
    fn bc_kinds_parse() {
        let op = build_tilted_dirac(1.0, 3).unwrap();
        for text in [
            r#"{"kind":"aps"}"#,
            r#"{"kind":"aps_modified","add":1,"remove":0}"#,
            r#"{"kind":"graph","epsilon":0.5,"order":-1,"seed":3}"#,
            r#"{"kind":"pseudo_local","projector":[[[0,0],[0,0]],[[0,0],[1,0]]]}"#,
            r#"{"kind":"explicit_basis","columns":[[{"mode":1,"vector":[[1,0],[0,0]]}]]}"#,
        ] {
            let bc: BcFile = serde_json::from_str(text).unwrap();
            assert_eq!(bc.to_condition(&op).unwrap().name(), text.split('"').nth(3).unwrap());
        }
        let bad: std::result::Result<BcFile, _> = serde_json::from_str(r#"{"kind":"dirichlet"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn torus_modes_and_problem_defaults() {
        let p: ProblemFile =
            serde_json::from_str(r#"{"source":[{"mode":[1,-1],"vector":[[1,0],[0,0],[0,0],[0,0]]}]}"#).unwrap();
        assert!(p.bc_left.is_none() && p.rho.is_none());
        let op = build_rs_torus(1).unwrap();
        let f = p.source_field(&op).unwrap();
        assert_eq!(f.coeffs[0].norm(), 1.0);
        assert!(example_operator("nondiag", 0.0, 0).is_err());
    }
}
