use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid ring: {0}")]
    InvalidRing(String),
    #[error("road set is empty")]
    NoRoads,
    #[error("need at least two barns, got {0}")]
    InsufficientBarns(usize),

    #[error("tile size {tile_meters} m is not a positive multiple of pixel size {pixel_size} m")]
    InvalidTileSize { tile_meters: f64, pixel_size: f64 },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("tile is {width}x{height}, rotation needs a square tile")]
    NonSquareTile { width: usize, height: usize },
    #[error("class {0} absent from all masks")]
    MissingClass(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("metric {0} is undefined for this input")]
    UndefinedMetric(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("reference value must be positive, got {0}")]
    InvalidReference(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("buffer disc at ({x:.1}, {y:.1}) r={radius} m lacks land-cover coverage")]
    OutOfCoverage { x: f64, y: f64, radius: f64 },
    #[error("land-cover code {0} missing from legend")]
    UnknownLandCover(u16),
    #[error("farm has no barns")]
    EmptyFarm,

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{k} folds requested but only {blocks} occupied blocks")]
    InsufficientBlocks { k: usize, blocks: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("size bounds [{lo}, {hi}] are inverted")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("filter rules: {0}")]
    InvalidRules(String),

    #[error("unknown production type label {0:?}")]
    UnknownLabel(String),

    #[error("cannot place {what}: scene extent too small")]
    PlacementOverflow { what: String },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
