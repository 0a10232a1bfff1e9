use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("verification failure: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 1,
            Error::Argument(_) | Error::Config(_) | Error::Shape { .. } => 2,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Lookup(_)
            | Error::Io { .. }
            | Error::Generation(_)
            | Error::Sampling(_) => 3,
            Error::Diverged { .. } => 4,
            Error::Incompatible(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
