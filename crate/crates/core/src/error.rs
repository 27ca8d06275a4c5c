use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("box lies entirely outside the {width}x{height} frame")]
    BoxOutsideFrame { width: u32, height: u32 },

    #[error("cannot apply softmax to an empty vector")]
    EmptyVector,

    #[error("cell ({cell_x}, {cell_y}) is outside the {s}x{s} grid")]
    IndexOutOfGrid { cell_x: usize, cell_y: usize, s: usize },

    #[error("box center ({bx}, {by}) is not strictly inside cell ({cell_x}, {cell_y})")]
    CenterOutsideCell { bx: f64, by: f64, cell_x: usize, cell_y: usize },

    #[error("degenerate probability: {0}")]
    DegenerateProbability(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("no detector data for frame {frame_id}: {detail}")]
    MissingFrameData { frame_id: u64, detail: String },

    #[error("label {label:?} is not in the {stage} vocabulary")]
    VocabularyViolation { label: String, stage: String },

    #[error("crop of box rounds to an empty rectangle")]
    DegenerateCrop,

    #[error("no policy configured for zone {0:?}")]
    UnknownZone(String),

    #[error("no fuzzy rule fired for illumination {illumination} and confidence {confidence}")]
    EmptyRuleActivation { illumination: f64, confidence: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("frame id {frame_id} does not follow previously integrated frame {last}")]
    NonMonotoneFrameId { frame_id: u64, last: u64 },

    #[error("class {0:?} has neither predictions nor ground truth")]
    NoGroundTruth(String),

    #[error("cannot split {n} items into {k} folds")]
    KTooLarge { n: usize, k: usize },

    #[error("{}:{line}: {message}", source_name)]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("bad image: {0}")]
    BadImage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
