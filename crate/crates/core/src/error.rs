use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grading function: {0}")]
    InvalidGrading(String),

    #[error("mesh budget of {budget} nodes is too small: {constraint}")]
    MeshBudget { budget: usize, constraint: String },

    #[error("degenerate tetrahedron {element} (signed volume {volume:e})")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(
        "potential is not finite at quadrature point ({:.6}, {:.6}, {:.6}) \
         of element {element}; nearest nucleus {nucleus} at distance {distance:e}",
        point[0], point[1], point[2]
    )]
    NonFinitePotential {
        element: usize,
        point: [f64; 3],
        nucleus: usize,
        distance: f64,
    },

    #[error("point is within {distance:e} bohr of nucleus {nucleus}")]
    NuclearSingularity { nucleus: usize, distance: f64 },

    #[error("invalid nuclear configuration: {0}")]
    InvalidNuclei(String),

    #[error("{method} solve did not converge: relative residual {residual:e} after {iterations} iterations (tolerance {tolerance:e})")]
    SolveFailed {
        method: &'static str,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("component system for orbital {orbital} is singular: shift 1/dt - c1/2 = {shift:e}")]
    SingularComponentSystem { orbital: usize, shift: f64 },

    #[error("fixed-point iteration for orbital {orbital} did not converge in {iterations} iterations (last increment {increment:e})")]
    InnerIterationLimit {
        orbital: usize,
        iterations: usize,
        increment: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dense problem of dimension {dimension} exceeds the limit of {limit}")]
    TooLarge { dimension: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
