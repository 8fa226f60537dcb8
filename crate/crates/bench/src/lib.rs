//! Shared fixtures for the pipeline benchmarks.

use wavefuzz_core::AudioClip;

/// Half-second 440 Hz tone at 16 kHz; the canonical benchmark clip.
pub fn bench_clip() -> AudioClip {
    AudioClip::new(
        (0..8000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect(),
        16000,
    )
    .unwrap()
}

/// Multi-tone clip with a noise floor; exercises every filter band.
pub fn rich_clip() -> AudioClip {
    let mut rng = wavefuzz_core::rng::Rng64::new(17);
    AudioClip::new(
        (0..8000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.35 * (2.0 * std::f64::consts::PI * 330.0 * t).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 1730.0 * t).sin()
                    + 0.05 * (2.0 * std::f64::consts::PI * 3100.0 * t).sin()
                    + 0.004 * rng.next_gaussian()
            })
            .collect(),
        16000,
    )
    .unwrap()
}
