use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration field violates its constraint. The message names the
    /// first offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Image decode/encode problems, including unsupported layouts.
    #[error("image error: {0}")]
    Image(String),

    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Checkpoint directory is malformed or fails checksum/shape verification.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// KD dataset directory is malformed.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A pipeline stage was invoked before its prerequisite artifact exists.
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    /// A loss term became non-finite during training.
    #[error("training diverged at iteration {iteration}: loss term `{term}` is not finite")]
    Diverged { term: &'static str, iteration: u64 },

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 config, 4 divergence, 3 any
    /// other stage failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Diverged { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
