use thiserror::Error;

/// Errors raised by the numerical layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("symbol is not elliptic: smallest singular value {min_sv:e} at sample {sample}")]
    NotElliptic { min_sv: f64, sample: usize },
    #[error("real eigenvalue {re:e}{im:+e}i in adapted symbol at sample {sample}")]
    RealEigenvalueFound { sample: usize, re: f64, im: f64 },
    #[error("eigenvalue clusters overlap: {0}")]
    ClusterAmbiguity(String),
    #[error("coefficient bandwidth {bandwidth} exceeds cutoff {cutoff}")]
    BandwidthExceeded { bandwidth: usize, cutoff: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no spectral gap in window [{lo}, {hi}]")]
    NoGapInWindow { lo: f64, hi: f64 },
    #[error("cut r = {r} meets the spectrum (distance {distance:e})")]
    CutHitsSpectrum { r: f64, distance: f64 },
    #[error("resolvent ill-conditioned at y = {y:e} (condition {cond:e})")]
    ResolventIllConditioned { y: f64, cond: f64 },
    #[error("modulus is singular")]
    SingularModulus,
    #[error("sector angle {theta} does not clear spectral angle {omega}")]
    SectorTooNarrow { theta: f64, omega: f64 },
    #[error("log grid too coarse: estimated truncation error {0:e}")]
    GridTooCoarse(f64),
    #[error("adjoint consistency failure: deviation {0:e}")]
    ConsistencyFailure(f64),
    #[error("degenerate pairing: smallest Gram singular value {0:e}")]
    DegeneratePairing(f64),
    #[error("ambiguous rank: singular value {sv:e} near tolerance {tol:e}")]
    AmbiguousRank { sv: f64, tol: f64 },
    #[error("decomposition residual {0:e} too large")]
    DecompositionResidualTooLarge(f64),
    #[error("not a projector symbol: idempotence defect {0:e}")]
    NotAProjectorSymbol(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("index methods disagree: global {global}, oracle {oracle}")]
    MethodDisagreement { global: i64, oracle: i64 },
    #[error("projector construction failed: rank {0}")]
    ProjectorConstructionFailure(usize),
    #[error("Schur iteration did not converge")]
    NoConvergence,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// True for errors that signal an undecidable numerical question rather than bad input.
    pub fn is_ambiguity(&self) -> bool {
        matches!(
            self,
            Error::AmbiguousRank { .. } | Error::MethodDisagreement { .. } | Error::ClusterAmbiguity(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Invalid(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
