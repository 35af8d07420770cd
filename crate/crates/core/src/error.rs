use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator is not Hermitian (residual {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("operator is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("scattering operator is not unitary (t_unitarity_residual {residual:e})")]
    NotUnitary { residual: f64 },

    #[error("environment state has trace {trace}, expected 1")]
    NotNormalized { trace: f64 },

    #[error("time step {dt:e} exceeds the admissible bound 1/||gamma|| = {bound:e}")]
    InadmissibleTimeStep { dt: f64, bound: f64 },

    #[error("channel {channel} is closed at total energy {energy} (threshold {threshold})")]
    ClosedChannel { channel: usize, energy: f64, threshold: f64 },

    #[error("no open channel at total energy {energy}")]
    NoOpenChannels { energy: f64 },

    #[error("Cayley transform is ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("collision energy {energy} lies outside the tabulated range [{min}, {max}]")]
    OutOfTableRange { energy: f64, min: f64, max: f64 },

    #[error("quadrature did not converge for {what}: residual {residual:e} > tolerance {tolerance:e}")]
    Quadrature { what: String, residual: f64, tolerance: f64 },

    #[error("rate tensor is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    RateTensorNotPositive { min_eigenvalue: f64, tolerance: f64 },

    #[error("adaptive step size underflow at t = {time}")]
    StepUnderflow { time: f64, last_state: Box<DMatrix<Complex64>> },

    #[error("coherence rho[{alpha}][{beta}] vanishes; its phase is undefined")]
    VanishingCoherence { alpha: usize, beta: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::StepUnderflow { .. }
                | Error::IllConditioned { .. }
                | Error::RateTensorNotPositive { .. }
        )
    }
}
