//! The MFCC feature extractor: a deterministic seven-stage chain.
//!
//! Stages: pre-emphasis -> framing -> Hamming window -> FFT power spectrum
//! -> mel filterbank -> log -> DCT-II, followed by delta and delta-delta
//! regression. The output is a `T x 3*n_ceps` matrix: static cepstra with
//! their first and second temporal derivatives appended per frame.
//!
//! Every stage is a total function on finite input: the log stage is floored,
//! so no clip in `[-1, 1]` can produce NaN or Inf.

use serde::Deserialize;
use std::f64::consts::PI;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::fft::Fft;

/// All constants of the feature chain.
///
/// `fmax_hz = None` means the Nyquist frequency of the clip being processed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub pre_emphasis_coeff: f64,
    pub frame_length_ms: f64,
    pub hop_length_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub delta_window: usize,
    pub log_floor: f64,
    pub fmin_hz: f64,
    pub fmax_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            pre_emphasis_coeff: 0.97,
            frame_length_ms: 25.0,
            hop_length_ms: 10.0,
            n_fft: 512,
            n_mels: 26,
            n_ceps: 13,
            delta_window: 2,
            log_floor: 1e-10,
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

impl MfccConfig {
    /// Frame length in samples at the given rate.
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Hop length in samples at the given rate.
    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Upper filterbank edge: configured value or Nyquist.
    pub fn fmax(&self, sample_rate: u32) -> f64 {
        self.fmax_hz.unwrap_or(sample_rate as f64 / 2.0)
    }

    /// Feature dimension per frame: static + delta + delta-delta.
    pub fn feature_dim(&self) -> usize {
        3 * self.n_ceps
    }

    /// Number of frames produced for `n_samples` of input, if at least one
    /// frame fits.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> Result<usize> {
        let frame = self.frame_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if n_samples < frame {
            return Err(Error::TooShort {
                needed: frame,
                got: n_samples,
            });
        }
        Ok(1 + (n_samples - frame) / hop)
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.pre_emphasis_coeff) {
            return fail(format!(
                "pre_emphasis_coeff must be in [0, 1), got {}",
                self.pre_emphasis_coeff
            ));
        }
        let frame = self.frame_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if frame < 2 {
            return fail(format!("frame length {frame} samples is too short"));
        }
        if hop == 0 || hop > frame {
            return fail(format!(
                "hop ({hop} samples) must be in [1, frame length = {frame}]"
            ));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < frame {
            return fail(format!(
                "n_fft = {} must be a power of two >= frame length ({frame} samples)",
                self.n_fft
            ));
        }
        if self.n_mels == 0 || self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return fail(format!(
                "need 1 <= n_ceps <= n_mels, got n_ceps = {}, n_mels = {}",
                self.n_ceps, self.n_mels
            ));
        }
        if self.delta_window == 0 {
            return fail("delta_window must be >= 1".into());
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return fail(format!("log_floor must be positive, got {}", self.log_floor));
        }
        let fmax = self.fmax(sample_rate);
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax) {
            return fail(format!(
                "need 0 <= fmin ({}) < fmax ({fmax})",
                self.fmin_hz
            ));
        }
        if fmax > sample_rate as f64 / 2.0 {
            return fail(format!(
                "fmax ({fmax}) exceeds Nyquist ({})",
                sample_rate as f64 / 2.0
            ));
        }
        Ok(())
    }
}

/// Dense row-major `frames x dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "feature matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Number of frames (rows).
    pub fn frame_count(&self) -> usize {
        self.rows
    }

    /// Per-frame feature dimension (columns).
    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Flattened row-major view.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Euclidean norm over the flattened matrix.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column-wise mean; the time-averaged feature vector.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.rows as f64;
        }
        means
    }
}

// ---------------------------------------------------------------------------
// Individual stages
// ---------------------------------------------------------------------------

/// Mel scale: `mel(f) = 2595 * log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// High-pass pre-emphasis: `y[0] = x[0]`, `y[n] = x[n] - coeff * x[n-1]`.
pub fn pre_emphasis(samples: &[f64], coeff: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    if let Some(&first) = samples.first() {
        out.push(first);
        for i in 1..samples.len() {
            out.push(samples[i] - coeff * samples[i - 1]);
        }
    }
    out
}

/// Hamming window `w[n] = 0.54 - 0.46 cos(2 pi n / (N-1))`.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Slice the signal into Hamming-windowed frames of `frame_samples` every
/// `hop_samples`; the trailing partial frame is discarded.
pub fn frame_and_window(
    samples: &[f64],
    cfg: &MfccConfig,
    sample_rate: u32,
) -> Result<Vec<Vec<f64>>> {
    let frame = cfg.frame_samples(sample_rate);
    let hop = cfg.hop_samples(sample_rate);
    let t = cfg.frame_count(samples.len(), sample_rate)?;
    let window = hamming_window(frame);
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let start = i * hop;
        frames.push(
            samples[start..start + frame]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect(),
        );
    }
    Ok(frames)
}

/// Power spectrum `P[k] = |DFT(frame)[k]|^2 / n_fft` for `k = 0..n_fft/2`,
/// the frame being zero-padded to `n_fft`.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    assert!(
        frame.len() <= n_fft,
        "frame ({}) longer than n_fft ({n_fft})",
        frame.len()
    );
    let fft = Fft::new(n_fft);
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    re[..frame.len()].copy_from_slice(frame);
    fft.process(&mut re, &mut im, false);
    power_bins(&re, &im, n_fft)
}

fn power_bins(re: &[f64], im: &[f64], n_fft: usize) -> Vec<f64> {
    let scale = 1.0 / n_fft as f64;
    (0..=n_fft / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]) * scale)
        .collect()
}

/// Triangular mel filterbank: `n_mels` rows of `n_fft/2 + 1` weights.
///
/// Peaks sit at `n_mels` points equally spaced on the mel scale between
/// `mel(fmin)` and `mel(fmax)`; triangles are unnormalized (peak value 1).
/// Fails if the FFT resolution leaves any filter without a bin.
pub fn mel_filterbank(cfg: &MfccConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let fmax = cfg.fmax(sample_rate);
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(fmax);
    // n_mels + 2 edge points; point i+1 is the peak of filter i.
    let n_points = cfg.n_mels + 2;
    let bin_of = |i: usize| -> usize {
        let mel = mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64;
        let hz = mel_to_hz(mel);
        let bin = ((cfg.n_fft as f64 + 1.0) * hz / sample_rate as f64).floor() as usize;
        bin.min(n_bins - 1)
    };

    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (bin_of(m), bin_of(m + 1), bin_of(m + 2));
        let mut row = vec![0.0; n_bins];
        if center > left {
            for k in left..=center {
                row[k] = (k - left) as f64 / (center - left) as f64;
            }
        }
        // Either slope pins row[center] to exactly 1; a filter whose three
        // edges collapse onto one bin stays empty and is rejected below.
        if right > center {
            for k in center..=right {
                row[k] = (right - k) as f64 / (right - center) as f64;
            }
            row[center] = 1.0;
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} is empty: n_mels = {} is too large for n_fft = {} at {sample_rate} Hz",
                cfg.n_mels, cfg.n_fft
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Floored log of filterbank energies: `L_m = ln(max(sum_k H[m,k] P[k], floor))`.
pub fn log_mel(power_spec: &[f64], filterbank: &[Vec<f64>], log_floor: f64) -> Vec<f64> {
    filterbank
        .iter()
        .map(|row| {
            let e: f64 = row.iter().zip(power_spec).map(|(h, p)| h * p).sum();
            e.max(log_floor).ln()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_ceps` coefficients:
/// `c_j = s_j * sum_m L_m cos(pi j (m + 0.5) / M)` with `s_0 = sqrt(1/M)`,
/// `s_j = sqrt(2/M)` otherwise.
pub fn dct_cepstra(log_mel_vec: &[f64], n_ceps: usize) -> Vec<f64> {
    let m_len = log_mel_vec.len();
    let mut out = Vec::with_capacity(n_ceps);
    for j in 0..n_ceps {
        let scale = if j == 0 {
            (1.0 / m_len as f64).sqrt()
        } else {
            (2.0 / m_len as f64).sqrt()
        };
        let sum: f64 = log_mel_vec
            .iter()
            .enumerate()
            .map(|(m, &v)| v * (PI * j as f64 * (m as f64 + 0.5) / m_len as f64).cos())
            .sum();
        out.push(scale * sum);
    }
    out
}

/// Temporal regression of per-frame features over a `+-window` span with
/// replicate padding at the edges:
/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`.
pub fn delta(features: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let t_len = features.frame_count();
    let dim = features.dim();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = FeatureMatrix::zeros(t_len, dim);
    for t in 0..t_len {
        for n in 1..=window {
            let fwd = features.row((t + n).min(t_len - 1));
            let bwd = features.row(t.saturating_sub(n));
            let row = out.row_mut(t);
            for c in 0..dim {
                row[c] += n as f64 * (fwd[c] - bwd[c]);
            }
        }
        for v in out.row_mut(t) {
            *v /= denom;
        }
    }
    out
}

/// Transpose of the [`delta`] linear map; consumes a cotangent and
/// accumulates it back onto the input features.
pub(crate) fn delta_vjp(cotangent: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let t_len = cotangent.frame_count();
    let dim = cotangent.dim();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = FeatureMatrix::zeros(t_len, dim);
    for t in 0..t_len {
        let scaled: Vec<f64> = cotangent.row(t).iter().map(|v| v / denom).collect();
        for n in 1..=window {
            let fwd = (t + n).min(t_len - 1);
            let bwd = t.saturating_sub(n);
            let w = n as f64;
            for c in 0..dim {
                out.row_mut(fwd)[c] += w * scaled[c];
                out.row_mut(bwd)[c] -= w * scaled[c];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Precomputed state for one `(config, sample_rate)` pair: window, FFT plan,
/// filterbank, and DCT basis. Read-only after construction and shareable
/// across threads.
#[derive(Debug, Clone)]
pub(crate) struct MfccPlan {
    pub cfg: MfccConfig,
    pub frame_len: usize,
    pub hop: usize,
    pub n_bins: usize,
    pub window: Vec<f64>,
    pub filterbank: Vec<Vec<f64>>,
    /// Row-major `n_ceps x n_mels` DCT-II basis (orthonormal scaling folded in).
    pub dct_basis: Vec<f64>,
    pub fft: Fft,
}

/// Forward-pass intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub features: FeatureMatrix,
    /// `T x n_mels` filterbank energies before the floored log.
    pub mel_energies: FeatureMatrix,
    /// Full complex spectra, `T x n_fft` each.
    pub spec_re: Vec<f64>,
    pub spec_im: Vec<f64>,
}

impl MfccPlan {
    pub fn new(cfg: &MfccConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let frame_len = cfg.frame_samples(sample_rate);
        let hop = cfg.hop_samples(sample_rate);
        let window = hamming_window(frame_len);
        let filterbank = mel_filterbank(cfg, sample_rate)?;
        let mut dct_basis = Vec::with_capacity(cfg.n_ceps * cfg.n_mels);
        for j in 0..cfg.n_ceps {
            let scale = if j == 0 {
                (1.0 / cfg.n_mels as f64).sqrt()
            } else {
                (2.0 / cfg.n_mels as f64).sqrt()
            };
            for m in 0..cfg.n_mels {
                dct_basis
                    .push(scale * (PI * j as f64 * (m as f64 + 0.5) / cfg.n_mels as f64).cos());
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            frame_len,
            hop,
            n_bins: cfg.n_fft / 2 + 1,
            window,
            filterbank,
            dct_basis,
            fft: Fft::new(cfg.n_fft),
        })
    }

    /// Run the full chain, retaining the intermediates the VJP needs.
    pub fn forward(&self, samples: &[f64]) -> Result<ForwardTrace> {
        let n_fft = self.cfg.n_fft;
        let n_mels = self.cfg.n_mels;
        let n_ceps = self.cfg.n_ceps;
        if samples.len() < self.frame_len {
            return Err(Error::TooShort {
                needed: self.frame_len,
                got: samples.len(),
            });
        }
        let t_len = 1 + (samples.len() - self.frame_len) / self.hop;
        let emphasized = pre_emphasis(samples, self.cfg.pre_emphasis_coeff);

        let mut spec_re = vec![0.0; t_len * n_fft];
        let mut spec_im = vec![0.0; t_len * n_fft];
        let mut mel_energies = FeatureMatrix::zeros(t_len, n_mels);
        let mut static_ceps = FeatureMatrix::zeros(t_len, n_ceps);

        let mut log_buf = vec![0.0; n_mels];
        for t in 0..t_len {
            let start = t * self.hop;
            let re = &mut spec_re[t * n_fft..(t + 1) * n_fft];
            let im = &mut spec_im[t * n_fft..(t + 1) * n_fft];
            for n in 0..self.frame_len {
                re[n] = emphasized[start + n] * self.window[n];
            }
            self.fft.process(re, im, false);

            let scale = 1.0 / n_fft as f64;
            let energies = mel_energies.row_mut(t);
            for (m, row) in self.filterbank.iter().enumerate() {
                let mut e = 0.0;
                for (k, &h) in row.iter().enumerate() {
                    if h != 0.0 {
                        e += h * (re[k] * re[k] + im[k] * im[k]) * scale;
                    }
                }
                energies[m] = e;
            }
            for m in 0..n_mels {
                log_buf[m] = energies[m].max(self.cfg.log_floor).ln();
            }
            let ceps = static_ceps.row_mut(t);
            for j in 0..n_ceps {
                let basis = &self.dct_basis[j * n_mels..(j + 1) * n_mels];
                ceps[j] = basis.iter().zip(&log_buf).map(|(b, l)| b * l).sum();
            }
        }

        let d1 = delta(&static_ceps, self.cfg.delta_window);
        let d2 = delta(&d1, self.cfg.delta_window);
        let mut features = FeatureMatrix::zeros(t_len, 3 * n_ceps);
        for t in 0..t_len {
            let row = features.row_mut(t);
            row[..n_ceps].copy_from_slice(static_ceps.row(t));
            row[n_ceps..2 * n_ceps].copy_from_slice(d1.row(t));
            row[2 * n_ceps..].copy_from_slice(d2.row(t));
        }

        Ok(ForwardTrace {
            features,
            mel_energies,
            spec_re,
            spec_im,
        })
    }
}

/// Extract the MFCC feature matrix of a clip: `T x 3*n_ceps`, static cepstra
/// plus delta and delta-delta, `T = 1 + floor((len - frame) / hop)`.
pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let plan = MfccPlan::new(cfg, clip.sample_rate())?;
    Ok(plan.forward(clip.samples())?.features)
}
