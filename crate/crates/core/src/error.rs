use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("field has {found} values but the grid has {expected} nodes")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("value {value} at node {node} violates 0 <= omega <= {lambda}")]
    OutOfBounds { node: usize, value: f64, lambda: f64 },
    #[error("negative or non-finite value {value} at node {node}")]
    NegativeValue { node: usize, value: f64 },
    #[error("singular kernel configuration: r = r' = {r} and xi = {xi} is a multiple of 2 pi / N")]
    Singular { r: f64, xi: f64 },
    #[error("kernel table would need {entries} entries, above the cap of {cap}")]
    TooLarge { entries: usize, cap: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("infeasible multipliers: no bracket for mu in [{mu_lo}, {mu_hi}] at alpha in [{alpha_lo}, {alpha_hi}]")]
    InfeasibleMultipliers {
        alpha_lo: f64,
        alpha_hi: f64,
        mu_lo: f64,
        mu_hi: f64,
    },
    #[error("empty support")]
    EmptySupport,
}

pub type Result<T> = std::result::Result<T, Error>;
