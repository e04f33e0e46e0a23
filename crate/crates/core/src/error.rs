use thiserror::Error;

/// Common result type for this library.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown frame name: {0:?}")]
    UnknownFrame(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The weighted normal matrix of the human internal model is rank
    /// deficient, which signals a redundant human-joint model.
    #[error("singular weighted normal matrix (smallest singular value {smallest_singular_value:.3e}); remove redundant human joints")]
    SingularNormalMatrix { smallest_singular_value: f64 },

    #[error("matrix {what} is singular")]
    SingularMatrix { what: &'static str },

    #[error("Riccati iteration diverged after {iterations} iterations (residual {residual:.3e}); an unstabilizable mode is likely")]
    RiccatiDivergence { residual: f64, iterations: usize },

    #[error("eigenvalue iteration failed to converge")]
    EigenvalueIteration,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A simulation error tagged with the step at which it occurred.
    #[error("simulation failed at step {step} (t = {time:.6} s): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the simulation step where it happened.
    pub fn at_step(self, step: usize, time: f64) -> Error {
        Error::AtStep {
            step,
            time,
            source: Box::new(self),
        }
    }
}
