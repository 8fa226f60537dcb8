//! Waveform container and RIFF/WAVE PCM-16 reading and writing.
//!
//! All processing in this crate happens on [`AudioClip`]: a non-empty mono
//! sequence of `f64` amplitudes in `[-1, +1]` plus a sample rate. Decoding
//! maps PCM as `sample / 32768`, encoding as `round(sample * 32767)` clamped
//! to the i16 range; the asymmetry keeps -1.0 exactly representable and
//! never overflows at +1.0.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A normalized mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Build a clip, validating the container invariants: non-empty samples,
    /// every amplitude in `[-1, +1]` and finite, positive sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidClip("samples must be non-empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if let Some((i, &s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidClip(format!(
                "sample {i} = {s} outside [-1, +1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square amplitude.
    pub fn rms(&self) -> f64 {
        let p: f64 = self.samples.iter().map(|s| s * s).sum();
        (p / self.samples.len() as f64).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

fn read_u16(buf: &[u8], at: usize) -> Result<u16> {
    let b = buf
        .get(at..at + 2)
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(buf: &[u8], at: usize) -> Result<u32> {
    let b = buf
        .get(at..at + 4)
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Read a RIFF/WAVE file containing 16-bit PCM, mono or stereo.
///
/// Stereo input is averaged to mono in the PCM domain before normalization.
/// Anything that is not PCM-16 is rejected with an error naming the header
/// field at fault; samples are never silently misinterpreted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    decode_wav(&bytes)
}

/// Decode WAV bytes; see [`read_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::MalformedWav("missing RIFF header".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedWav(format!(
                    "chunk {:?} claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                let format = read_u16(bytes, body_start)?;
                let channels = read_u16(bytes, body_start + 2)?;
                let rate = read_u32(bytes, body_start + 4)?;
                let bits = read_u16(bytes, body_start + 14)?;
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {} // skip unknown chunks (LIST, fact, ...)
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::MalformedWav("no fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::UnsupportedWavFormat {
            field: "audio_format",
            value: format.to_string(),
        });
    }
    if bits != 16 {
        return Err(Error::UnsupportedWavFormat {
            field: "bits_per_sample",
            value: bits.to_string(),
        });
    }
    if channels != 1 && channels != 2 {
        return Err(Error::UnsupportedWavFormat {
            field: "num_channels",
            value: channels.to_string(),
        });
    }
    if rate == 0 {
        return Err(Error::UnsupportedWavFormat {
            field: "sample_rate",
            value: "0".into(),
        });
    }
    let data = data.ok_or_else(|| Error::MalformedWav("no data chunk".into()))?;

    let bytes_per_frame = 2 * channels as usize;
    if data.len() % bytes_per_frame != 0 {
        return Err(Error::MalformedWav(format!(
            "data chunk size {} is not a multiple of the {}-byte frame",
            data.len(),
            bytes_per_frame
        )));
    }
    let n_frames = data.len() / bytes_per_frame;
    if n_frames == 0 {
        return Err(Error::MalformedWav("data chunk holds no samples".into()));
    }

    let mut samples = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let at = i * bytes_per_frame;
        let pcm = if channels == 1 {
            i16::from_le_bytes([data[at], data[at + 1]]) as f64
        } else {
            let l = i16::from_le_bytes([data[at], data[at + 1]]) as f64;
            let r = i16::from_le_bytes([data[at + 2], data[at + 3]]) as f64;
            (l + r) / 2.0
        };
        samples.push(pcm / 32768.0);
    }
    AudioClip::new(samples, rate)
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Quantize one normalized sample to PCM-16.
fn quantize(s: f64) -> i16 {
    (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encode a clip as a mono PCM-16 RIFF/WAVE byte stream.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.len();
    let data_size = (n * 2) as u32;
    let rate = clip.sample_rate();
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// Write a clip to disk as mono PCM-16 WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}
