use std::path::PathBuf;

/// Failure of a CLI command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("inconsistent inputs: {0}")]
    Mismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] ris_inr::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 config error, 3 I/O or file format, 4 consistency.
    pub fn exit_code(&self) -> u8 {
        use ris_inr::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Mismatch(_) => 4,
            CliError::Core(e) => match e {
                E::Io(_) | E::Format(_) => 3,
                E::InvalidArgument(_) | E::DegenerateGeometry(_) | E::Diverged(_) => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
