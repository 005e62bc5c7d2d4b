use thiserror::Error;

/// Errors raised by the mesh, quadrature, measure and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the admissible range of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A mesh (generated or loaded) violates one of the structural invariants.
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    /// Quadrature, factorization or extrapolation broke down.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Newton did not reach the residual tolerance.
    #[error("newton did not converge after {iterations} iterations (last residual {last:.3e})")]
    Convergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    /// A requested discretization would exceed the configured memory bound.
    #[error("resource limit: {0}")]
    Resource(String),

    /// A failure while solving for one member of a mollified sequence.
    #[error("at mollification index {n}: {source}")]
    AtIndex { n: u32, source: Box<Error> },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures that come from the numerics rather than from bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::AtIndex { source, .. } => source.is_numeric(),
            _ => matches!(
                self,
                Error::Numeric(_) | Error::Convergence { .. } | Error::Resource(_)
            ),
        }
    }
}
