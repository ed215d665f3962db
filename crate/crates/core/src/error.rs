//! Shared error type for the whole crate.

/// Crate-wide error enumeration. Variants map one-to-one onto the failure
/// modes of the public operations (construction, implicit-loop solving,
/// composition, equilibrium search, SDP solving, training, ingestion).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("implicit channel loop did not converge: {0}")]
    NoConvergence(String),
    #[error("singular interconnection: {0}")]
    SingularInterconnection(String),
    #[error("dimension chain broken: {0}")]
    DimensionChainBroken(String),
    #[error("no equilibrium found: {0}")]
    NoEquilibrium(String),
    #[error("unsupported channel {index}: {msg}")]
    UnsupportedChannel { index: usize, msg: String },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("training loss diverged at epoch {epoch} (loss = {loss})")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),
    #[error("malformed row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },
    #[error("state divergence detected at step {step} (inf-norm {norm:e})")]
    DivergenceDetected { step: usize, norm: f64 },
    #[error("certificate falsified: {0}")]
    FalsifiedCertificate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
