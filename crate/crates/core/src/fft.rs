//! Radix-2 complex FFT used by the power-spectrum stage and its backward pass.
//!
//! The transform is the plain DFT definition `X[k] = sum_n x[n] e^{-2pi i kn/N}`
//! (no normalization in either direction); the inverse flag conjugates the
//! twiddles, so `inverse(forward(x)) = N * x`. Twiddles and the bit-reversal
//! permutation are precomputed once per plan.

use std::f64::consts::PI;

/// Precomputed FFT plan for a fixed power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    // e^{-2pi i k / n} for k in 0..n/2
    twiddle_re: Vec<f64>,
    twiddle_im: Vec<f64>,
    bit_rev: Vec<u32>,
}

impl Fft {
    /// Build a plan for length `n`, which must be a power of two >= 2.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n.is_power_of_two(), "fft length must be a power of two >= 2, got {n}");
        let half = n / 2;
        let mut twiddle_re = Vec::with_capacity(half);
        let mut twiddle_im = Vec::with_capacity(half);
        for k in 0..half {
            let ang = -2.0 * PI * k as f64 / n as f64;
            twiddle_re.push(ang.cos());
            twiddle_im.push(ang.sin());
        }
        let bits = n.trailing_zeros();
        let bit_rev = (0..n as u32).map(|i| i.reverse_bits() >> (32 - bits)).collect();
        Self {
            n,
            twiddle_re,
            twiddle_im,
            bit_rev,
        }
    }

    /// In-place transform of the complex signal `(re, im)`.
    ///
    /// `inverse = false` computes the DFT; `inverse = true` computes the
    /// conjugate-twiddle transform (unnormalized inverse).
    pub fn process(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        assert_eq!(re.len(), n);
        assert_eq!(im.len(), n);

        for i in 0..n {
            let j = self.bit_rev[i] as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }

        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = {
                        let t = k * stride;
                        if inverse {
                            (self.twiddle_re[t], -self.twiddle_im[t])
                        } else {
                            (self.twiddle_re[t], self.twiddle_im[t])
                        }
                    };
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }
}
