use redp_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document (line {line}): {msg}")]
    MalformedDocument { line: usize, msg: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown identifier `{name}` (line {line})")]
    UnknownIdentifier { line: usize, name: String },
    #[error("dialogue `{0}` has a user turn with no labelled actions")]
    IncompleteTurn(String),
    #[error("cannot take {requested} test dialogues from {available}")]
    NotEnoughDialogues { requested: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("no negative actions to rank against")]
    EmptyNegatives,
    #[error("attention memory is empty")]
    EmptyMemory,
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("dialogue prefix contains no user turn")]
    EmptyPrefix,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("inconsistent simulator state: {0}")]
    InconsistentState(String),
    #[error("bundled corpus `{0}` failed its checksum")]
    CorruptBundle(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid fraction {fraction}: training pool holds {pool} dialogues")]
    InvalidFraction { fraction: usize, pool: usize },
    #[error("unmatched utterance on line {line}: `{text}`")]
    UnmatchedUtterance { line: usize, text: String },
    #[error("malformed bAbI input (line {line}): {msg}")]
    MalformedBabi { line: usize, msg: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
