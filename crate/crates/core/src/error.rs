use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has non-finite coordinates: {0:?}")]
    NonFinite([f64; 4]),
    #[error("box corners are inverted (need x1 <= x2, y1 <= y2): {0:?}")]
    Inverted([f64; 4]),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("invalid image size {width}x{height}")]
    InvalidImageSize { width: f64, height: f64 },
    #[error("invalid anchor config: {0}")]
    InvalidConfig(String),
    #[error("level {level} out of range (config has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ground-truth class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("cannot place {requested} people in a {width}x{height} image (placed {placed} after {attempts} attempts)")]
    InfeasibleDensity {
        requested: usize,
        placed: usize,
        attempts: usize,
        width: f64,
        height: f64,
    },
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("MR undefined: no non-ignored ground truth across all images")]
    MrUndefined,
    #[error("AAR undefined: assignment has zero positive anchors")]
    NoPositives,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Errors from reading or writing annotation, config and report files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("odgt line {line}: {message}")]
    Odgt { line: usize, message: String },
    #[error("coco json at `{path}`: {message}")]
    Coco { path: String, message: String },
    #[error("detections json at `{path}`: {message}")]
    Detections { path: String, message: String },
    #[error("config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("report `{report}` has no {format} output")]
    UnsupportedFormat { format: &'static str, report: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::File {
            path: path.into(),
            source,
        }
    }

    /// Config and schema failures are usage errors; everything else is a
    /// runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, IoError::Config { .. })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
