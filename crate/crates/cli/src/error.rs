use std::path::PathBuf;

/// Process exit codes. Clap itself exits with 2 on usage errors.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const VALIDATION: u8 = 5;
    pub const RUNTIME: u8 = 6;
    pub const OUTPUT: u8 = 7;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config {}: {message}", path.display())]
    MissingFile { path: PathBuf, message: String },
    #[error("cannot parse config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid config key `{key}`: {reason}")]
    Validation { key: String, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingFile { .. } => exit::MISSING_FILE,
            CliError::Parse { .. } => exit::PARSE,
            CliError::Validation { .. } => exit::VALIDATION,
            CliError::Usage(_) => exit::USAGE,
            CliError::Runtime(_) => exit::RUNTIME,
            CliError::Output { .. } => exit::OUTPUT,
        }
    }
}
