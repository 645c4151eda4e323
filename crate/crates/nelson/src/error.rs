use thiserror::Error;

/// Errors surfaced by grid construction, Fock-space operations, solvers and
/// the study drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("basis dimension {dim} exceeds configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("truncation tail mass {tail:.3e} exceeds tolerance {tol:.3e}")]
    TruncationTail { tail: f64, tol: f64 },

    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: &'static str, detail: String },

    #[error("|∇E| = {grad_norm:.6} > 1/2; coupling too large for this truncation")]
    GradientBound { grad_norm: f64 },

    #[error("quadrature tolerance not met: requested {requested:.3e}, achieved {achieved:.3e}")]
    ToleranceNotMet { requested: f64, achieved: f64 },

    #[error("sigma ladder under-resolved: reference sigma {sigma:.3e} below grid scale {grid_scale:.3e}")]
    LadderTooDeep { sigma: f64, grid_scale: f64 },

    #[error("missing ground state for p = ({0:.4}, {1:.4}, {2:.4})")]
    MissingGroundState(f64, f64, f64),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
