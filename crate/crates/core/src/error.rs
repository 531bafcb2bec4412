use thiserror::Error;

/// Errors produced by network construction, the network algebra, certification and flow builds.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("network must have at least one layer")]
    EmptyNetwork,

    #[error("layer {layer} has zero width")]
    ZeroWidthLayer { layer: usize },

    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("activation has no identity network emulation")]
    UnsupportedActivation,

    #[error("invalid activation: {0}")]
    InvalidActivation(String),

    #[error("target depth {target} is smaller than current depth {current}")]
    TargetTooSmall { target: usize, current: usize },

    #[error("network is not endomorphic: input dim {input} != output dim {output}")]
    NotEndomorphic { input: usize, output: usize },

    #[error("composition chain is empty")]
    EmptyChain,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("network contains non-finite parameters")]
    NonFiniteParameters,

    #[error("convergence rate R must be positive, got {0}")]
    NonpositiveR(f64),

    #[error("missing Lipschitz constant for factor {factor}")]
    MissingLipschitz { factor: usize },

    #[error("reference integration did not converge within {max_steps} steps")]
    NoConvergence { max_steps: usize },

    #[error("Euler bound violated at point {x_id}, n = {n}: measured {measured:e} > bound {bound:e}")]
    BoundViolated {
        x_id: usize,
        n: usize,
        measured: f64,
        bound: f64,
    },

    #[error("required step count exceeds cap {cap}")]
    CapExceeded { cap: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
