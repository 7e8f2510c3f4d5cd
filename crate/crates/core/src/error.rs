use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the grasping pipeline.
#[derive(Debug, Error)]
pub enum EtaError {
    #[error("degenerate rectangles")]
    DegenerateRectangles,
    #[error("angle out of range: {0}")]
    AngleOutOfRange(f64),
    #[error("degenerate point set")]
    DegeneratePointSet,
    #[error("degenerate polygon")]
    DegeneratePolygon,
    #[error("invalid grasp rectangle: {0}")]
    InvalidGrasp(String),

    #[error("unknown object family: {0}")]
    UnknownFamily(String),
    #[error("group size mismatch: {views} viewpoints cannot be split into {groups} groups")]
    GroupSizeMismatch { views: usize, groups: usize },
    #[error("object not visible")]
    ObjectNotVisible,
    #[error("viewpoint {0} out of range")]
    ViewpointOutOfRange(usize),
    #[error("scene generation failed: no solvable scene after {0} attempts")]
    Unsolvable(usize),

    #[error("no candidates")]
    NoCandidates,
    #[error("target out of bounds: ({x:.2}, {y:.2})")]
    TargetOutOfBounds { x: f64, y: f64 },
    #[error("divergent update")]
    DivergentUpdate,
    #[error("empty training set")]
    EmptyDataset,

    #[error("no object features")]
    NoObjectFeatures,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("divergent training")]
    DivergentTraining,
    #[error("invalid observation group {group} for {groups} groups")]
    InvalidGroup { group: usize, groups: usize },

    #[error("step count must be at least 1")]
    InvalidStepCount,
    #[error("episode is not exploring")]
    NotExploring,
    #[error("at viewpoint {viewpoint}: {source}")]
    AtViewpoint {
        viewpoint: usize,
        #[source]
        source: Box<EtaError>,
    },

    #[error("invalid config: {0}")]
    Config(String),
    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EtaError> = std::result::Result<T, E>;

impl EtaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EtaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_viewpoint(self, viewpoint: usize) -> Self {
        EtaError::AtViewpoint {
            viewpoint,
            source: Box::new(self),
        }
    }
}
