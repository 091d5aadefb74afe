use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}, line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] smallarea::Error),
}

impl CliError {
    /// Process exit status: 2 usage or configuration, 3 I/O, 4 malformed
    /// input, 5 fitting, 6 estimation, 7 bootstrap.
    pub fn exit_code(&self) -> i32 {
        use smallarea::Error as E;
        match self {
            Self::Usage(_) => 2,
            Self::Io { .. } => 3,
            Self::Parse { .. } | Self::Input(_) | Self::Json(_) => 4,
            Self::Core(e) => match e {
                E::Config(_) | E::Domain(_) => 2,
                E::InvalidInput(_) | E::LengthMismatch { .. } => 4,
                E::Fit(_) | E::RankDeficient { .. } | E::Separation { .. } | E::NonConvergence { .. } => 5,
                E::Estimation { .. } => 6,
                E::TooManyFailures { .. } => 7,
            },
        }
    }
}
