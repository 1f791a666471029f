use thiserror::Error;

/// Errors raised by the certificate library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in `{field}`")]
    NonFinite { field: &'static str },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("free-fall singularity: thrust vector norm {norm:.3e} below {threshold:.3e}")]
    FreeFall { norm: f64, threshold: f64 },

    #[error("attitude singularity: thrust axis aligned with the heading axis")]
    HeadingSingularity,

    #[error("vehicles {i} and {j} occupy the same position; pair has no certificate")]
    DegenerateGeometry { i: usize, j: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadratic program infeasible without snap bounds (upstream state in collision?)")]
    Infeasible,

    #[error("actuator audit failed for vehicle {vehicle} at sample {index}: {source}")]
    AuditSample {
        vehicle: usize,
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(field: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { field })
    }
}
