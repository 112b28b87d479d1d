use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing upstream artifact `{0}`; run the earlier pipeline stage first")]
    MissingArtifact(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("{error}")]
    Infeasible {
        name: String,
        output_dir: std::path::PathBuf,
        error: minset_core::Error,
    },
    #[error(transparent)]
    Core(#[from] minset_core::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
