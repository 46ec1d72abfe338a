use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} is outside the support [0, {vmax}]")]
    Domain { value: f64, vmax: f64 },

    #[error("density vanishes at v = {at}; virtual value is undefined there")]
    Singularity { at: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid allocation rule: {0}")]
    InvalidAllocation(String),

    #[error("ROI target must satisfy 1 < M < inf, got {0}")]
    InvalidRoiTarget(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("distribution violates decreasing marginal revenue: psi drops by {worst_decrease:e} at v = {location}")]
    NotDmr { worst_decrease: f64, location: f64 },

    #[error("revenue dominance failed: optimal {optimal} < baseline {baseline}")]
    Dominance { optimal: f64, baseline: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}
