use std::path::{Path, PathBuf};

use thiserror::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_STATISTICAL: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: malformed realization file: {source}", path.display())]
    Format { path: PathBuf, source: serde_json::Error },

    #[error("{}: unsupported format version {found} (this build reads {supported})", path.display())]
    Version { path: PathBuf, found: u32, supported: u32 },

    #[error(transparent)]
    Core(#[from] dyson_cascade::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Bad input from the caller maps to 3; broken numerics or corrupted
    /// files map to 2.
    pub fn exit_code(&self) -> i32 {
        use dyson_cascade::Error as E;
        match self {
            Self::Usage(_) | Self::Io { .. } => EXIT_USAGE,
            Self::Format { .. } | Self::Version { .. } => EXIT_INVARIANT,
            Self::Core(e) => match e {
                E::InvalidParameter(_)
                | E::OutOfRange { .. }
                | E::MaxLevel(_)
                | E::InsufficientDepth { .. }
                | E::InsufficientSamples { .. } => EXIT_USAGE,
                _ => EXIT_INVARIANT,
            },
        }
    }
}
