use num_complex::Complex64;
use thiserror::Error;

/// Everything that can go wrong inside the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distortion is not invertible: |theta| * sup|g'| = {0:.6} >= 1")]
    NonInvertibleContour(f64),

    #[error("axis potential is singular on the contour at node {index} (x = {x}, phi(x) = {phi})")]
    ContourSingularity { index: usize, x: f64, phi: Complex64 },

    #[error("no bound state: the undistorted axis operator has no eigenvalue below 0")]
    NoBoundState,

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("angular-momentum truncation too small: {0}")]
    TruncationTooSmall(String),

    #[error("z = {z} collides with the essential-spectrum ray of Landau level {level}")]
    RayCollision { z: Complex64, level: usize },

    #[error("Landau-level tail bound {bound:.3e} >= 1/8, increase the level cutoff (currently {levels})")]
    IncreaseLevels { bound: f64, levels: usize },

    #[error("I + T is nearly singular at z = {z} (condition estimate {condition:.3e}); refine the contour")]
    NearSingular { z: Complex64, condition: f64 },

    #[error("eigen-solver failure: {0}")]
    EigenSolver(String),

    #[error("winding number {value:.4} is not close to an integer: {context}")]
    NonIntegerWinding { value: f64, context: String },

    #[error("contour too close to a zero or singularity: {0}")]
    ContourReposition(String),

    #[error("Newton iteration left the capture basin after {} steps", trajectory.len())]
    NewtonDivergence { trajectory: Vec<Complex64> },

    #[error("epsilon extrapolation invalid at mu = {mu}: estimates {estimates:?}")]
    Extrapolation { mu: f64, estimates: Vec<f64> },

    #[error("not enough usable points for a fit: {0}")]
    InsufficientData(String),

    #[error("functional calculus not converged under refinement: {0}")]
    TraceNotConverged(String),

    #[error("configuration violates {} hypothesis(es): {}", .0.len(), .0.join("; "))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
