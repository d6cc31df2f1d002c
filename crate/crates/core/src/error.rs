use thiserror::Error;

use crate::tree::TreeParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("parameter mismatch: {0:?} vs {1:?}")]
    ParamMismatch(TreeParams, TreeParams),
    #[error("invalid vertex {0}")]
    InvalidVertex(String),
    #[error("invalid complete subtree: {0}")]
    InvalidTree(String),
    #[error("invalid permutation: {0}")]
    InvalidPerm(String),
    #[error("invalid tree pair: {0}")]
    InvalidPair(String),
    #[error("label outside the local group at {0}")]
    LabelOutsideGroup(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("element not found in generating set: {0}")]
    NotInSigma(String),
    #[error("generating set check failed: {0}")]
    Generation(String),
    #[error("word does not represent the identity")]
    NotNullHomotopic,
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}
