//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MeelError>;

/// Every failure mode of the library, one named variant per contract violation.
#[derive(Debug, Error)]
pub enum MeelError {
    #[error("vector norm {norm:e} is below the degeneracy threshold")]
    DegenerateNorm { norm: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("inner dimension mismatch: {left} vs {right}")]
    InnerDimMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("label {label} out of range for {n} logits")]
    LabelOutOfRange { label: usize, n: usize },

    #[error("label position {label} is masked")]
    MaskedLabel { label: usize },

    #[error("{name} must be positive, got {value}")]
    NonPositiveDimension { name: &'static str, value: usize },

    #[error("{name} = {value} violates constraint: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("batch of {batch} exceeds queue capacity {capacity}")]
    BatchExceedsCapacity { batch: usize, capacity: usize },

    #[error("embedding norm {norm} deviates from 1 beyond tolerance")]
    NotUnitNorm { norm: f64 },

    #[error("class index {class} out of range for {count} centers")]
    ClassOutOfRange { class: usize, count: usize },

    #[error("batch size {batch} too small: {reason}")]
    BatchTooSmall { batch: usize, reason: &'static str },

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("caption {caption} references video {owner}, but only {n_videos} videos exist")]
    DanglingOwner {
        caption: usize,
        owner: usize,
        n_videos: usize,
    },

    #[error("video {video} appears in more than one split")]
    OverlappingSplits { video: usize },

    #[error("split `{split}` references video {video}, but only {n_videos} videos exist")]
    SplitIndexOutOfRange {
        split: &'static str,
        video: usize,
        n_videos: usize,
    },

    #[error("video {video} has no captions")]
    VideoWithoutCaption { video: usize },

    #[error("{what}: expected {expected}, got {actual}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("{extra} trailing bytes after declared payload")]
    TrailingBytes { extra: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MeelError {
    /// True for errors caused by invalid configuration or incompatible inputs
    /// (as opposed to runtime/IO failures). The CLI maps these to exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            MeelError::Config { .. }
                | MeelError::InvalidParameter { .. }
                | MeelError::NonPositiveDimension { .. }
                | MeelError::LengthMismatch { .. }
                | MeelError::InnerDimMismatch { .. }
                | MeelError::ShapeMismatch { .. }
                | MeelError::CountMismatch { .. }
                | MeelError::DanglingOwner { .. }
                | MeelError::OverlappingSplits { .. }
                | MeelError::SplitIndexOutOfRange { .. }
                | MeelError::VideoWithoutCaption { .. }
                | MeelError::BatchTooSmall { .. }
        )
    }
}
