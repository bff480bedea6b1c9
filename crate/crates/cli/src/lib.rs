//! Pipeline driver: configuration, stage artifacts and the full run.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub mod config;
pub mod stages;

pub use config::{InputConfig, InputSource, PipelineConfig};
pub use stages::{run_pipeline, run_stage, Manifest, ManifestPart, PART_NAMES};

/// Pipeline steps, in order. `Phantom` stands apart and writes a fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Mesh,
    Mirror,
    Register,
    Sleeve,
    Mould,
    Export,
    Phantom,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Mesh,
        Stage::Mirror,
        Stage::Register,
        Stage::Sleeve,
        Stage::Mould,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Mesh => "mesh",
            Stage::Mirror => "mirror",
            Stage::Register => "register",
            Stage::Sleeve => "sleeve",
            Stage::Mould => "mould",
            Stage::Export => "export",
            Stage::Phantom => "phantom",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: missing upstream artifact {}", path.display())]
    MissingUpstreamArtifact { stage: Stage, path: PathBuf },
    /// A design gate rejected the input outright.
    #[error("{stage}: {cause}")]
    Gate { stage: Stage, cause: String },
    #[error("{stage}: {cause}")]
    Stage { stage: Stage, cause: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gate { .. } => EXIT_GATE,
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingUpstreamArtifact { .. } => EXIT_USAGE,
            CliError::Stage { .. } | CliError::Io { .. } => EXIT_INTERNAL,
        }
    }
}
