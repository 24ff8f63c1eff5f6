//! Command line pipeline over a dataset directory, and the review service.

mod commands;
pub mod server;

use std::path::{Path, PathBuf};

use segfactory::labeler::{CandidateKind, SceneRecord};

pub use commands::{init_logging, run, Cli, Command};

/// Exit status of a failed command.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, missing inputs or an unusable config. Exit code 1.
    Usage(String),
    /// Inputs that exist but cannot be processed. Exit code 2.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<segfactory::Error> for CliError {
    fn from(e: segfactory::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// `scenes/<id>/overlays/<kind>.png`, next to the scene image.
pub fn overlay_path(record: &SceneRecord, kind: CandidateKind) -> PathBuf {
    let dir = record.image_path.parent().unwrap_or(Path::new(""));
    dir.join("overlays").join(format!("{}.png", kind.as_str()))
}
