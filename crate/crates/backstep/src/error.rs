use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("growth order alpha must exceed 1, got {0}")]
    GrowthOrder(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} lies beyond the tabulated law ({available} entries)")]
    BeyondTable { index: usize, available: usize },

    #[error("resonance: |lambda_{j} - lambda_{i} + lambda| = {gap:e} below floor {floor:e}")]
    Resonance {
        i: usize,
        j: usize,
        gap: f64,
        floor: f64,
    },

    #[error("distance enumeration needs index {needed}, limit is {limit}")]
    EnumerationOverflow { needed: usize, limit: usize },

    #[error("no candidate damping at N={n} clears the floor {floor:e} (best {best:e})")]
    CertificateFailure { n: usize, floor: f64, best: f64 },

    #[error("product factor vanishes at (row {row}, index {index})")]
    ZeroFactor { row: usize, index: usize },

    #[error("gain floor violated at mode {mode}: |k b| = {value:e} < {floor:e}")]
    GainFloor { mode: usize, value: f64, floor: f64 },

    #[error("tail bound requires N > {threshold}, got N = {n}")]
    TailThreshold { threshold: f64, n: usize },

    #[error("matrix singular to pivot tolerance at column {0}")]
    Singular(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("synthesis self-check failed: {0}")]
    SelfCheck(String),

    #[error("stage {stage} grew the norm by {growth:e}, above its certified factor {bound:e}")]
    Divergence { stage: usize, growth: f64, bound: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that signal a mathematical guard (resonance, gain
    /// floor, divergence) rather than bad input.
    pub fn is_math_guard(&self) -> bool {
        match self {
            Error::Resonance { .. }
            | Error::CertificateFailure { .. }
            | Error::ZeroFactor { .. }
            | Error::GainFloor { .. }
            | Error::Singular(_)
            | Error::SelfCheck(_)
            | Error::Divergence { .. } => true,
            Error::Stage { source, .. } => source.is_math_guard(),
            _ => false,
        }
    }
}
