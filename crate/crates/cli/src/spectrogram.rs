//! Log-power spectrogram export: CSV (frames x bins) and 8-bit PGM.

use wavefuzz_core::mfcc::{frame_and_window, power_spectrum, MfccConfig};
use wavefuzz_core::{AudioClip, Result};

/// Framed log-power spectrogram of a clip: `frames x (n_fft/2 + 1)` values
/// of `ln(max(P, log_floor))`. Framing and windowing follow the feature
/// config; no pre-emphasis is applied.
pub fn log_power_spectrogram(clip: &AudioClip, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let frames = frame_and_window(clip.samples(), cfg, clip.sample_rate())?;
    Ok(frames
        .iter()
        .map(|frame| {
            power_spectrum(frame, cfg.n_fft)
                .into_iter()
                .map(|p| p.max(cfg.log_floor).ln())
                .collect()
        })
        .collect())
}

/// CSV rendition: one row per frame, nine significant digits.
pub fn to_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v:.8e}"));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Binary PGM (P5), linear grayscale with per-image min-max normalization.
/// Image width = frame count, height = bins; row `b` holds bin `b` across
/// all frames.
pub fn to_pgm(rows: &[Vec<f64>]) -> Vec<u8> {
    let width = rows.len();
    let height = rows.first().map_or(0, |r| r.len());
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for row in rows {
        for &v in row {
            min = min.min(v);
            max = max.max(v);
        }
    }
    let span = max - min;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    for b in 0..height {
        for row in rows {
            let g = if span > 0.0 {
                (255.0 * (row[b] - min) / span).round() as u8
            } else {
                0
            };
            out.push(g);
        }
    }
    out
}
