use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("F is not positive anywhere on the scan range")]
    NoPositiveF,

    #[error("quadrature did not converge (achieved relative tolerance {achieved:.3e})")]
    Accuracy { achieved: f64 },

    #[error("shooting failed: {reason} (bracket [{lo}, {hi}])")]
    Shooting { reason: String, lo: f64, hi: f64 },

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("field is not projectable onto the Nehari-Pohozaev set: integral of H is {0:.6e}")]
    NotProjectable(f64),

    #[error("field is off the Nehari-Pohozaev set: |M| = {m:.3e} > {tol:.3e}")]
    NotOnManifold { m: f64, tol: f64 },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),

    #[error("mass {rho} is at or above the threshold (rho^2 = {rho_sq:.6e} >= {threshold:.6e})")]
    AboveThreshold { rho: f64, rho_sq: f64, threshold: f64 },

    #[error("descent left the well: |grad u| = {grad:.6e} reached the guard {guard:.6e} after {iterations} iterations")]
    EscapedWell {
        grad: f64,
        guard: f64,
        iterations: usize,
        trajectory: Vec<f64>,
    },

    #[error("descent stalled after {iterations} iterations (energy {energy:.12e}, residual {residual:.3e})")]
    Stall {
        iterations: usize,
        energy: f64,
        residual: f64,
    },

    #[error("iterates persistently fall on the wrong branch (M+) after {0} rejections")]
    WrongBranch(usize),

    #[error("degenerate point of the Nehari-Pohozaev set met; rho {rho} exceeds the small-mass guard {guard:.6e}")]
    RhoTooLarge { rho: f64, guard: f64 },

    #[error("time step too large: energy jumped by {jump:.3e} in one step; try dt <= {suggested_dt:.3e}")]
    StepSize { jump: f64, suggested_dt: f64 },

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
