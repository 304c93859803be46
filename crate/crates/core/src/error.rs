use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (CoNLL-U, parameter files, rule files, configs).
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A caller violated an operation's preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Every tree of the sentence has zero weight under the current model and
    /// constraint settings.
    #[error("no feasible tree for a sentence of length {n} (depth bound {depth_bound})")]
    Infeasible { n: usize, depth_bound: String },

    #[error("sentence {0} has no gold heads")]
    MissingGold(usize),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
