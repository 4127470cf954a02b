use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("state leaves the regular hard phase at r = {r:e} (m = {m:e}, rho = {rho:e}): {reason}")]
    Domain {
        r: f64,
        m: f64,
        rho: f64,
        reason: &'static str,
    },

    #[error("radius {radius} exceeds the contraction bound {limit:.6}")]
    ContractionRegime { radius: f64, limit: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("bracket [{lo}, {hi}] does not enclose a sign change ({f_lo:e}, {f_hi:e})")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("grid mismatch: expected {expected} nodes, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("perturbation must vanish at the center (got {0:e})")]
    CenterNotPinned(f64),

    #[error("deformed configuration crosses shells near node {0}")]
    ShellCrossing(usize),

    #[error("epsilon {0} outside [0, 1/2]")]
    EpsilonOutOfRange(f64),

    #[error("time step {dt:e} violates the stability bound {dt_max:e}")]
    Cfl { dt: f64, dt_max: f64 },

    #[error("energy grew by a factor {ratio:e} at phi = {phi:e}")]
    Instability { phi: f64, ratio: f64 },

    #[error("only {found} of {requested} roots found below {limit}")]
    BracketExhausted {
        found: usize,
        requested: usize,
        limit: f64,
    },

    #[error("eigenvalue ladder has an unresolved gap after mode {0}")]
    MissedRoot(usize),

    #[error("ODE integration failed at t = {t:e}: {reason}")]
    Integration { t: f64, reason: &'static str },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of an iterative or root-finding procedure.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Bracket { .. }
                | Error::BracketExhausted { .. }
                | Error::MissedRoot(_)
                | Error::Integration { .. }
        )
    }

    /// True for violations of a physical or numerical invariant during a run.
    pub fn is_invariant(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::ShellCrossing(_) | Error::Instability { .. }
        )
    }
}
