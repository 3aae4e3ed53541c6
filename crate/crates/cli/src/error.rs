use std::path::Path;

use gradleak_core::Error as CoreError;

/// Failure of one command, with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// 2 validation, 3 rank deficient, 4 no usable dense node, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 2,
            Self::Io { .. } => 1,
            Self::Core(e) => match e {
                CoreError::RankDeficient { .. } => 3,
                CoreError::AllBiasGradientsZero => 4,
                CoreError::InvalidActivationOutput { .. } | CoreError::EmptySystem => 1,
                _ => 2,
            },
        }
    }
}
