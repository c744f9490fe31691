use crate::spgraph::Violation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A composition sequence breaks one or more structural invariants.
    #[error("invalid composition sequence: {}", Violation::join(.0))]
    InvalidSequence(Vec<Violation>),

    /// An instance file could not be parsed or fails validation.
    #[error("cannot parse instance: {0}")]
    Parse(String),

    /// An exhaustive oracle was asked to enumerate past its size limit.
    #[error("{what} supports at most m = {limit}, got m = {got}")]
    TooLarge {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    /// The relaxation builder was handed inconsistent data.
    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
