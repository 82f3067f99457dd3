use thiserror::Error;

/// Errors produced by the mesh, assembly, solver and driver layers.
#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate tetrahedron {tet}: signed volume {volume:e}")]
    DegenerateTet { tet: usize, volume: f64 },

    #[error("unsupported quadrature degree {0} (supported: 1..=8)")]
    UnsupportedDegree(usize),

    #[error("non-finite {what} evaluation on element {element}")]
    NonFinite { what: &'static str, element: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("reduced system is singular or indefinite (active set size {active})")]
    SingularSystem { active: usize },

    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FemError>;
