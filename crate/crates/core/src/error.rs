use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix has no entry above machine epsilon")]
    AllZeroMatrix,
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("rank {t} outside [1, {n_dim}]")]
    InvalidRank { t: usize, n_dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has a non-negligible imaginary part; this path needs a real matrix")]
    ComplexMatrix,

    #[error("state is not the register ground state")]
    NotGroundState,
    #[error("input not normalized: norm^2 = {0}")]
    NormViolation(f64),
    #[error("qubit {qubit} out of range for a {num_qubits}-qubit register")]
    IndexOutOfRange { qubit: usize, num_qubits: usize },
    #[error("control and target sets overlap on qubit {0}")]
    OverlappingQubits(usize),
    #[error("outcome {outcome} on qubit {qubit} has probability {probability:e}")]
    ImpossibleOutcome {
        qubit: usize,
        outcome: u8,
        probability: f64,
    },
    #[error("no qubits selected for sampling")]
    EmptySubset,
    #[error("expected {expected} angles, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("parameter index {index} out of range ({count} parameters)")]
    ParameterIndex { index: usize, count: usize },

    #[error("post-selection on the flag ancilla is impossible (probability {0:e})")]
    PostselectionImpossible(f64),
    #[error("analytic reference amplitude {analytic} disagrees with simulated {simulated}")]
    CalibrationMismatch { analytic: f64, simulated: f64 },
    #[error("all {0} shots failed post-selection")]
    NoSurvivingShots(u64),
    #[error("reference amplitude is zero; recovery undefined")]
    DegenerateReference,
    #[error("p00 = {p00:e} is below the floor {floor:e}; increase shots")]
    VanishingP00 { p00: f64, floor: f64 },

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotSymmetricPsd(String),
    #[error("every diagonal value is below the rank threshold")]
    ZeroMatrix,
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    ConvergenceFailure(usize),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Input(String),
}

impl Error {
    /// Errors that indicate an implementation fault rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::CalibrationMismatch { .. } | Error::NormViolation(_) | Error::NotGroundState
        )
    }
}
