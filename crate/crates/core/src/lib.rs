//! Clean-label audio poisoning toolkit.
//!
//! Protects voice recordings from being useful as training data: a
//! gradient-driven perturbation pushes each clip's MFCC features away from
//! the original while an L2 penalty keeps the waveform change quiet. The
//! crate provides:
//!
//! - [`audio`]: PCM-16 WAV reading/writing on a normalized mono clip type.
//! - [`mod@mfcc`]: the deterministic feature pipeline (pre-emphasis, framing,
//!   Hamming window, FFT power spectrum, mel filterbank, log, DCT, deltas).
//! - [`grad`]: hand-written reverse-mode derivatives through every stage,
//!   composing to the gradient of the poisoning objective.
//! - [`mod@poison`]: the Adam-driven attack loop and a Gaussian-noise baseline.
//! - [`metrics`]: SNR, accuracy decline, poison rate, feature distance.
//! - [`eval`]: a desk-scale harness — synthetic dataset, logistic-regression
//!   classifier, poisoning scenarios, and substitute-model epsilon
//!   calibration.

// Indexed loops mirror the stage formulas; iterator rewrites obscure them.
#![allow(clippy::needless_range_loop)]

pub mod audio;
pub mod error;
pub mod eval;
pub mod fft;
pub mod grad;
pub mod metrics;
pub mod mfcc;
pub mod optim;
pub mod parallel;
pub mod poison;
pub mod rng;

pub use audio::{read_wav, write_wav, AudioClip};
pub use error::{Error, Result};
pub use eval::{
    calibrate_epsilon, generate_dataset, run_poison_experiment, train_classifier, Calibration,
    Classifier, ExperimentEngine, ExperimentReport, LabeledDataset, PoisonMethod, Scenario,
    TrainConfig,
};
pub use grad::{mfcc_vjp, objective_and_grad, ObjectiveValue};
pub use metrics::MetricReport;
pub use mfcc::{mfcc, FeatureMatrix, MfccConfig};
pub use poison::{poison, random_noise_baseline, PoisonConfig, PoisonResult};
