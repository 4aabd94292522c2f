use std::io;

use thiserror::Error;

/// Errors raised by the sampling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge ({src}, {dst}) references a node outside 0..{node_count}")]
    EdgeOutOfRange { src: usize, dst: usize, node_count: usize },
    #[error("node {0} has no neighbors; every sampling root needs degree >= 1")]
    IsolatedNode(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("sampling plan error: {0}")]
    Plan(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
