//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by audio I/O, the feature pipeline, the optimizer, and
/// the evaluation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file is a RIFF/WAVE container but uses an unsupported encoding.
    /// `field` names the offending header field.
    #[error("unsupported wav format: {field} = {value} (only PCM 16-bit mono/stereo is supported)")]
    UnsupportedWavFormat { field: &'static str, value: String },

    /// The byte stream is not a well-formed RIFF/WAVE file.
    #[error("malformed wav file: {0}")]
    MalformedWav(String),

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Input shorter than one analysis frame.
    #[error("input too short: {got} samples, need at least {needed} for one frame")]
    TooShort { needed: usize, got: usize },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {got_rows}x{got_cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// SNR is undefined when the clean signal is identically zero.
    #[error("snr undefined: clean signal has zero power")]
    UndefinedSnr,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The poisoning objective became NaN/Inf mid-run.
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    /// Classifier training diverged.
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    /// The requested poison rate selects zero clips.
    #[error(
        "poison rate {pr_percent}% selects zero of {n_train} training clips; \
         use a larger dataset or a higher rate"
    )]
    PoisonRateTooLow { pr_percent: f64, n_train: usize },

    /// Epsilon calibration found no clip whose substitute prediction flips.
    #[error("calibration failed: none of the {n_clips} clips flipped the substitute's prediction")]
    CalibrationFailed { n_clips: usize },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
