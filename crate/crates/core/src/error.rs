use std::path::PathBuf;

use thiserror::Error;

use crate::se3::Pose;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The rotation angle is within tolerance of pi, where the logarithm axis is ambiguous.
    #[error("rotation angle {angle} is at the pi branch boundary (ambiguous axis)")]
    AngleAtPi { angle: f64 },

    /// One or more edge measurements rotate by an angle outside the admissible range.
    #[error("edge measurements too far from the identity (angle >= pi - 0.1): {edges:?}")]
    MeasurementsNearPi { edges: Vec<(usize, usize)> },

    #[error("matrix is not a proper rotation (orthogonality error {ortho_err:e}, det {det})")]
    NotARotation { ortho_err: f64, det: f64 },

    #[error("quaternion norm {norm} deviates from 1 by more than 1e-6")]
    NonUnitQuaternion { norm: f64 },

    #[error("viewing graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("no path between vertices {from} and {to}")]
    NoPath { from: usize, to: usize },

    #[error("linear solver did not converge: relative residual {relative_residual:e} after {iterations} iterations")]
    SolverDiverged { relative_residual: f64, iterations: usize },

    #[error("degenerate neighborhood around point {index}: covariance rank < 2")]
    DegenerateNeighborhood { index: usize },

    /// ICP stopped without meeting its tolerance. The last estimate is still usable.
    #[error("ICP did not converge (rms {rms})")]
    NoConvergence { pose: Box<Pose>, rms: f64 },

    #[error("loop {index} is not closed")]
    OpenLoop { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{}:{line}: field `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
