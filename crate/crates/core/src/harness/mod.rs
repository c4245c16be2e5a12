//! Training, evaluation, ablation, completion of single clouds and the
//! gradient-check catalogue behind the command line.

pub mod ablate;
pub mod checkpoint;
pub mod complete;
pub mod eval;
pub mod gradcheck;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::DiffError;
use crate::binio::FormatError;
use crate::config::ModelError;
use crate::data::DataError;
use crate::geom::GeomError;

pub use ablate::{ablate, AblateOptions, AblationResult, RunSummary};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedModel};
pub use complete::{complete, complete_cloud, CompleteOptions};
pub use eval::{evaluate, evaluate_model, EvalReport, EvalRow};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome, TrainSettings};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset not found at {0}")]
    DatasetMissing(PathBuf),
    #[error("loss diverged at epoch {epoch}, step {step}: {detail}")]
    DivergedLoss { epoch: usize, step: usize, detail: String },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("input has {got} points, need at least {min}")]
    TooFewPoints { got: usize, min: usize },
    #[error("gradient check failed for {0}")]
    GradCheckFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgs(String),
    #[error(transparent)]
    Data(DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DataError> for HarnessError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::DatasetMissing(p) => HarnessError::DatasetMissing(p),
            other => HarnessError::Data(other),
        }
    }
}

impl From<DiffError> for HarnessError {
    fn from(e: DiffError) -> Self {
        HarnessError::Model(ModelError::Diff(e))
    }
}

impl From<GeomError> for HarnessError {
    fn from(e: GeomError) -> Self {
        HarnessError::Model(ModelError::Geom(e))
    }
}

fn format_class(e: &FormatError) -> &'static str {
    match e {
        FormatError::BadMagic(_) => "BadMagic",
        FormatError::TruncatedFile => "TruncatedFile",
        FormatError::UnsupportedVersion(_) => "UnsupportedVersion",
        FormatError::ParseError { .. } => "ParseError",
        FormatError::Corrupt(_) => "Corrupt",
        FormatError::Io(_) => "Io",
    }
}

fn geom_class(e: &GeomError) -> &'static str {
    match e {
        GeomError::DegenerateCloud => "DegenerateCloud",
        GeomError::BadCount { .. } => "BadCount",
        GeomError::EmptyCloud => "EmptyCloud",
        GeomError::NonFinite(_) => "NonFinite",
    }
}

impl HarnessError {
    /// Stable name of the error kind, for the one-line CLI error report.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::DatasetMissing(_) => "DatasetMissing",
            HarnessError::DivergedLoss { .. } => "DivergedLoss",
            HarnessError::ConfigMismatch(_) => "ConfigMismatch",
            HarnessError::TooFewPoints { .. } => "TooFewPoints",
            HarnessError::GradCheckFailed(_) => "GradCheckFailed",
            HarnessError::InvalidArgs(_) => "InvalidArgs",
            HarnessError::Data(e) => match e {
                DataError::BadSpec(_) => "BadSpec",
                DataError::CameraInside { .. } => "CameraInside",
                DataError::EmptyScan => "EmptyScan",
                DataError::InsufficientPoints { .. } => "InsufficientPoints",
                DataError::DatasetMissing(_) => "DatasetMissing",
                DataError::Geom(g) => geom_class(g),
                DataError::Format(f) => format_class(f),
                DataError::Json(_) => "Json",
                DataError::Io(_) => "Io",
            },
            HarnessError::Model(e) => match e {
                ModelError::Diff(d) => match d {
                    DiffError::ShapeMismatch(_) => "ShapeMismatch",
                    DiffError::DegenerateBatch(_) => "DegenerateBatch",
                    DiffError::NonScalarLoss(_) => "NonScalarLoss",
                    DiffError::NonFinite(_) => "NonFinite",
                    DiffError::MissingParam(_) => "MissingParam",
                },
                ModelError::Geom(g) => geom_class(g),
                ModelError::LayerCountMismatch { .. } => "LayerCountMismatch",
                ModelError::CountMismatch(_) => "CountMismatch",
                ModelError::InvalidConfig(_) => "InvalidConfig",
            },
            HarnessError::Format(f) => format_class(f),
            HarnessError::Json(_) => "Json",
            HarnessError::Io(_) => "Io",
        }
    }
}

/// Lowercase hex of a byte string.
pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Round-trip formatting for CSV cells.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_reach_through_wrappers() {
        let e: HarnessError = DataError::Format(FormatError::TruncatedFile).into();
        assert_eq!(e.class(), "TruncatedFile");
        let e: HarnessError = DataError::DatasetMissing("x".into()).into();
        assert!(matches!(e, HarnessError::DatasetMissing(_)));
        let e: HarnessError = FormatError::ParseError { line: 3, msg: "x".into() }.into();
        assert_eq!(e.class(), "ParseError");
        let e: HarnessError = GeomError::EmptyCloud.into();
        assert_eq!(e.class(), "EmptyCloud");
    }

    #[test]
    fn hex_is_lowercase_pairs() {
        assert_eq!(hex(&[0, 15, 255]), "000fff");
    }
}
