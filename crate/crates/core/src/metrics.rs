//! Evaluation quantities: SNR, accuracy decline, poison rate, and the
//! feature-space distance that the attack drives.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mfcc::FeatureMatrix;

/// Summary of one clean/perturbed comparison, serialized as JSON by the CLI.
///
/// An infinite SNR (identical signals) is serialized as the string `"inf"`
/// because JSON has no infinity literal.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "serialize_db")]
    pub snr_db: f64,
    pub feature_distance: f64,
    pub dacc_percent: f64,
    pub pr_percent: f64,
}

/// Serialize a dB value, mapping infinities to the strings "inf" / "-inf".
pub fn serialize_db<S: Serializer>(value: &f64, ser: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        ser.serialize_f64(*value)
    } else if *value > 0.0 {
        ser.serialize_str("inf")
    } else {
        ser.serialize_str("-inf")
    }
}

/// Signal-to-noise ratio in dB between a clean signal and its perturbed
/// version: `10 log10(sum clean^2 / sum (perturbed - clean)^2)`.
///
/// Returns `+inf` when the perturbation is identically zero; fails when the
/// clean signal has no power (the ratio is undefined).
pub fn snr_db(clean: &[f64], perturbed: &[f64]) -> Result<f64> {
    if clean.len() != perturbed.len() {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            got: perturbed.len(),
        });
    }
    let signal: f64 = clean.iter().map(|s| s * s).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let noise: f64 = clean
        .iter()
        .zip(perturbed)
        .map(|(c, p)| (p - c) * (p - c))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Accuracy decline in percentage points; negative when the poisoned model
/// is the better one.
pub fn dacc(acc_clean_percent: f64, acc_poisoned_percent: f64) -> f64 {
    acc_clean_percent - acc_poisoned_percent
}

/// Poison rate: share of poisoned examples in the whole training set,
/// as a percentage.
pub fn pr_percent(m_poisoned: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("poison rate of an empty set".into()));
    }
    if m_poisoned > total {
        return Err(Error::InvalidArgument(format!(
            "poisoned count {m_poisoned} exceeds total {total}"
        )));
    }
    Ok(100.0 * m_poisoned as f64 / total as f64)
}

/// L2 distance between two feature matrices of identical shape, taken over
/// the flattened values.
pub fn feature_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.frame_count() != b.frame_count() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected_rows: a.frame_count(),
            expected_cols: a.dim(),
            got_rows: b.frame_count(),
            got_cols: b.dim(),
        });
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
