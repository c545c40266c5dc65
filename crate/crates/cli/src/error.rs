use std::fmt;

use nlkv_core::artifacts::ArtifactError;
use nlkv_core::fields::GridError;
use nlkv_core::fitting::FitError;
use nlkv_core::ingest::IngestError;
use nlkv_core::pipeline::PipelineError;
use nlkv_core::validation::SynthesisError;

use crate::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Synth,
    Fields,
    Samples,
    Fit,
    Compare,
    Diagnose,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Fields => "fields",
            Stage::Samples => "samples",
            Stage::Fit => "fit",
            Stage::Compare => "compare",
            Stage::Diagnose => "diagnose",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Degenerate,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Degenerate => 4,
            ErrorKind::Internal => 5,
        }
    }
}

/// A stage-tagged failure with its exit-code class.
#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error [{}]: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

/// Attaches the failing stage to an error.
pub trait Tagged<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

/// Exit-code class of a library error.
pub trait Classify: fmt::Display {
    fn kind(&self) -> ErrorKind;

    fn message(&self) -> String {
        self.to_string()
    }
}

impl<T, E: Classify> Tagged<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e.kind(), e.message()))
    }
}

impl Classify for ConfigError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Config
    }
}

impl Classify for IngestError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }
}

impl Classify for SynthesisError {
    fn kind(&self) -> ErrorKind {
        match self {
            SynthesisError::NoVehicles | SynthesisError::Ingest(_) => ErrorKind::Data,
            _ => ErrorKind::Config,
        }
    }
}

impl Classify for GridError {
    fn kind(&self) -> ErrorKind {
        match self {
            GridError::InvalidSpec(_) => ErrorKind::Config,
            GridError::DomainTooSmall { .. } => ErrorKind::Data,
            GridError::ShapeMismatch(..) => ErrorKind::Internal,
        }
    }
}

impl Classify for PipelineError {
    fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Grid(e) => e.kind(),
            PipelineError::NoUsableSegment { .. } => ErrorKind::Data,
        }
    }
}

impl Classify for FitError {
    fn kind(&self) -> ErrorKind {
        match self {
            FitError::SingleClass { .. } | FitError::Model(_) => ErrorKind::Degenerate,
            FitError::NoSamples => ErrorKind::Data,
            FitError::Config(_) => ErrorKind::Config,
            FitError::WrongSamples { .. } => ErrorKind::Internal,
        }
    }

    fn message(&self) -> String {
        match self {
            FitError::SingleClass { .. } => format!("compute_omega: {self}"),
            _ => self.to_string(),
        }
    }
}

impl Classify for ArtifactError {
    fn kind(&self) -> ErrorKind {
        match self {
            ArtifactError::Io { .. } => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_names_omega_and_exits_4() {
        let e = Err::<(), _>(FitError::SingleClass { omega: 1.0 })
            .at(Stage::Fit)
            .unwrap_err();
        assert_eq!(e.exit_code(), 4);
        let text = e.to_string();
        assert!(text.starts_with("error [fit]: compute_omega"), "{text}");
    }

    #[test]
    fn missing_artifact_is_a_data_error() {
        let e = Err::<(), _>(ArtifactError::Missing("samples/nlkv.csv".into()))
            .at(Stage::Diagnose)
            .unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("samples/nlkv.csv"));
    }
}
