use thiserror::Error;

use crate::optim::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("CFL condition violated: dt = {dt} exceeds the admissible step {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("implicit diffusion solve did not converge at step {step} (residual {residual:.3e} after {iterations} iterations)")]
    Diffusion {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("numerical blow-up at step {step}: non-finite particle state")]
    Blowup { step: usize },

    #[error("reflection failed at step {step} for particle {particle}: position {position:?} still infeasible")]
    Reflection {
        step: usize,
        particle: usize,
        position: [f64; 2],
    },

    #[error("parameter extraction did not converge after {} iterations", .trace.records.len())]
    Extraction { trace: Trace },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("failed to serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
}
