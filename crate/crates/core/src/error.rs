use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // viewgen
    #[error("input must be square, got {height}x{width}")]
    NonSquareInput { height: usize, width: usize },
    #[error("resize by {ratio} of {height}x{width} collapses to an empty image")]
    DegenerateSize { height: usize, width: usize, ratio: f64 },
    #[error("affine correspondence points are collinear")]
    CollinearPoints,
    #[error("view `{0}` configured more than once")]
    DuplicateView(String),
    #[error("view configuration must contain the original view exactly once")]
    MissingOriginal,
    #[error("invalid view ratio: {0}")]
    InvalidRatio(String),
    #[error("unknown view tag `{0}`")]
    UnknownView(String),

    // encoder
    #[error("input {height}x{width} is not divisible by 32")]
    IndivisibleInput { height: usize, width: usize },
    #[error("cannot read weight file {path}: {reason}")]
    WeightFileUnreadable { path: PathBuf, reason: String },
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("unsupported residual depth {0}")]
    UnsupportedDepth(usize),

    // camv / cfu
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("{channels} channels cannot be split into {chunks} equal chunks")]
    IndivisibleChannels { channels: usize, chunks: usize },
    #[error("channel interaction needs at least 2 chunks, got {0}")]
    TooFewChunks(usize),
    #[error("decoder level shapes inconsistent: {0}")]
    LevelShapeMismatch(String),

    // losses / metrics
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truth contains values other than 0 and 1")]
    NonBinaryGT,
    #[error("epoch {epoch} outside schedule range 0..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("no prediction for ground truth `{0}`")]
    MissingPair(String),
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },

    // harness
    #[error("no mask for image {0}")]
    MissingMask(PathBuf),
    #[error("dataset at {0} contains no images")]
    EmptyDataset(PathBuf),
    #[error("early stopping needs at least two evaluations, got {0}")]
    InsufficientHistory(usize),
    #[error("loss became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
