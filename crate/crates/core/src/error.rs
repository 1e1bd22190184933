use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("material reluctivity must be positive, got {0}")]
    SingularMaterial(f64),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("reduced basis training failed: {0}")]
    TrainingFailure(String),
    #[error("coercivity lower bound is not positive ({0})")]
    NonpositiveCoercivity(f64),
    #[error("variance is numerically zero")]
    ZeroVariance,
    #[error("parameter outside the admissible set: {0}")]
    InfeasibleParameter(String),
    #[error("parameter has no reduced model in the dictionary")]
    OutsideDictionary,
    #[error("quadratic subproblem failed: {0}")]
    QpFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
