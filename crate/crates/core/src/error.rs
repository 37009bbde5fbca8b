use thiserror::Error;

use crate::frobenius::LeafSample;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("subspaces are not complementary: {0}")]
    NotComplementary(String),

    /// The operator restricted to the prescribed range complement is singular.
    #[error("restriction of the operator to the prescribed complement is numerically singular")]
    DegenerateSplit,

    #[error("outside the admissible ball: {what} = {value:e}, bound {bound:e}")]
    OutOfBall {
        what: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("R(T) meets N(A+): no generalized inverse of T with the prescribed complements")]
    NoInverseInBall,

    #[error("operator point carries no generalized inverse")]
    NeedsSplitting,

    #[error("point {point:?} is not in the co-final set")]
    NotCofinal { point: Vec<f64> },

    #[error("operator is not in S: its range meets N(A+)")]
    NotInS,

    #[error("direction is not in M(A): E* component {residual:e}")]
    InvalidDirection { residual: f64 },

    #[error("Newton inversion failed after {iterations} iterations, residual {residual:e}")]
    InverseFailure { iterations: usize, residual: f64 },

    #[error("base point is not generalized regular: condition fails at sample {witness:?}")]
    NotRegular { witness: Vec<f64> },

    #[error("D(x) is numerically singular at {point:?}")]
    OutOfNeighborhood { point: Vec<f64> },

    #[error("evaluation failed at {point:?}: {message}")]
    Evaluation { point: Vec<f64>, message: String },

    #[error("leaf integration aborted after {} grid points: {source}", partial.len())]
    AbortedLeaf {
        partial: Box<LeafSample>,
        #[source]
        source: Box<Error>,
    },

    #[error("leaf integration produced a non-finite state after {} grid points", partial.len())]
    Divergence { partial: Box<LeafSample> },

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
