//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors raised by material parameter validation and kernel evaluation.
#[derive(Debug, Error)]
pub enum MaterialError {
    /// A physical invariant is violated (non-PD stiffness, bad porosity, ...).
    #[error("non-physical material data: {0}")]
    NonPhysical(String),
    /// Kernel evaluated at an excluded frequency (s = 0 or on the branch cut).
    #[error("kernel domain error: {0}")]
    Domain(String),
}

/// Errors raised by the pole-residue fitting pipeline.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("interpolation nodes collide at working precision (nodes {0} and {1})")]
    NodeCollision(usize, usize),
    #[error("singular matrix pencil: {0}")]
    SingularPencil(String),
    #[error("sign certification failed: {0}")]
    SignViolation(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// Errors raised by the forward/adjoint solvers.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-physical cell ({ix},{iz}): {msg}")]
    NonPhysical { ix: usize, iz: usize, msg: String },
    #[error("instability detected at t = {t:.6e} s, cell ({ix},{iz}), field {field}")]
    Instability {
        t: f64,
        ix: usize,
        iz: usize,
        field: &'static str,
    },
    #[error("position ({x}, {z}) outside the usable interior")]
    OutOfDomain { x: f64, z: f64 },
    #[error("receiver geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("forward snapshots missing or at wrong cadence: {0}")]
    CadenceMismatch(String),
    #[error("missing or inconsistent forward run: {0}")]
    MissingForwardRun(String),
    #[error("energy decay violated at sample {index}: ratio {ratio:.3e}")]
    DecayViolation { index: usize, ratio: f64 },
    #[error("line search failed after {0} trial steps")]
    LineSearchFailure(usize),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// Errors raised by configuration parsing and file I/O.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("bad magic in {path}: expected {expected:?}")]
    MagicMismatch { path: String, expected: [u8; 4] },
    #[error("unsupported format version {found} in {path}")]
    VersionUnsupported { path: String, found: u32 },
    #[error("truncated file {path}: needed {needed} more bytes")]
    TruncatedFile { path: String, needed: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Top-level error, mapped to process exit codes by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl Error {
    /// Process exit code contract: 2 validation, 3 numerical, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Material(_) => 2,
            Error::Io(IoError::Parse { .. }) | Error::Io(IoError::Validation(_)) => 2,
            Error::Solver(SolverError::NonPhysical { .. })
            | Error::Solver(SolverError::GeometryMismatch(_))
            | Error::Solver(SolverError::OutOfDomain { .. })
            | Error::Solver(SolverError::CadenceMismatch(_)) => 2,
            Error::Fit(FitError::Material(_)) => 2,
            Error::Fit(_) => 3,
            Error::Solver(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
