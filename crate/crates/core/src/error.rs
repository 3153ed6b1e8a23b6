use std::path::PathBuf;

use magnifier_nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("patch {patch_w}x{patch_h} does not tile image {image_w}x{image_h}")]
    NonDivisibleGrid {
        image_w: usize,
        image_h: usize,
        patch_w: usize,
        patch_h: usize,
    },
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no patch at grid position ({row}, {col})")]
    MissingPatch { row: usize, col: usize },
    #[error("more than one patch at grid position ({row}, {col})")]
    DuplicatePosition { row: usize, col: usize },
    #[error("grid position ({row}, {col}) outside a {n_rows}x{n_cols} grid")]
    PositionOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("incompatible branch shapes: {0}")]
    IncompatibleShapes(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{index} needs band {band} which profile {profile} lacks")]
    MissingBand {
        index: String,
        band: String,
        profile: String,
    },
    #[error("raster has fewer than two distinct values")]
    ConstantRaster,
    #[error("mask contains value {0}, expected 0 or 1")]
    NonBinaryInput(u8),
    #[error("no cost model for layer `{0}`")]
    UnsupportedLayer(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("{samples} samples (or groups) cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    DivergenceDetected {
        epoch: usize,
        step: usize,
        loss: f32,
    },
    #[error("checkpoint expects {expected} channels, dataset provides {found}")]
    IncompatibleProfile { expected: usize, found: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::UnsupportedLayer(name) => Error::UnsupportedLayer(name),
            NnError::ShapeMismatch {
                context,
                expected,
                found,
            } => Error::ShapeMismatch {
                context,
                expected,
                found,
            },
            other => Error::BadCheckpoint(other.to_string()),
        }
    }
}
