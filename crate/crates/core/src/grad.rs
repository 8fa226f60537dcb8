//! Reverse-mode derivatives through the MFCC chain and the poisoning
//! objective.
//!
//! [`mfcc_vjp`] pulls a feature-space cotangent back to a per-sample
//! gradient, stage by stage in reverse: delta regression -> DCT -> floored
//! log -> filterbank -> power spectrum -> windowed framing (overlap-add) ->
//! pre-emphasis. [`objective_and_grad`] composes that into the gradient of
//!
//! `J(delta) = -|| MF(x + delta) - MF(x) ||_2 + alpha * ||delta||_2`.
//!
//! Both L2 norms are singular at zero; below [`DISTANCE_GUARD`] /
//! [`NORM_GUARD`] the corresponding normalized direction is replaced by the
//! zero vector.

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mfcc::{delta_vjp, FeatureMatrix, ForwardTrace, MfccConfig, MfccPlan};

/// Below this feature distance the distance term of the gradient is zeroed.
pub const DISTANCE_GUARD: f64 = 1e-12;
/// Below this perturbation norm the penalty term of the gradient is zeroed.
pub const NORM_GUARD: f64 = 1e-12;

/// Decomposition of the objective at one point:
/// `total = -feature_distance + penalty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub feature_distance: f64,
    pub penalty: f64,
}

/// Vector-Jacobian product of the MFCC extractor at `clip`: returns
/// `cotangent^T * (d MF / d samples)` as a per-sample gradient.
pub fn mfcc_vjp(clip: &AudioClip, cfg: &MfccConfig, cotangent: &FeatureMatrix) -> Result<Vec<f64>> {
    let plan = MfccPlan::new(cfg, clip.sample_rate())?;
    let trace = plan.forward(clip.samples())?;
    backward(&plan, clip.len(), &trace, cotangent)
}

/// Backward pass over a stored forward trace.
pub(crate) fn backward(
    plan: &MfccPlan,
    input_len: usize,
    trace: &ForwardTrace,
    cotangent: &FeatureMatrix,
) -> Result<Vec<f64>> {
    let t_len = trace.features.frame_count();
    let n_ceps = plan.cfg.n_ceps;
    let n_mels = plan.cfg.n_mels;
    let n_fft = plan.cfg.n_fft;
    if cotangent.frame_count() != t_len || cotangent.dim() != 3 * n_ceps {
        return Err(Error::ShapeMismatch {
            expected_rows: t_len,
            expected_cols: 3 * n_ceps,
            got_rows: cotangent.frame_count(),
            got_cols: cotangent.dim(),
        });
    }

    // Concatenation + delta chain: with A the delta map,
    // features = [c | A c | A (A c)], so
    // c_bar = U_s + A^T (U_d + A^T U_dd).
    let mut u_static = FeatureMatrix::zeros(t_len, n_ceps);
    let mut u_d1 = FeatureMatrix::zeros(t_len, n_ceps);
    let mut u_d2 = FeatureMatrix::zeros(t_len, n_ceps);
    for t in 0..t_len {
        let row = cotangent.row(t);
        u_static.row_mut(t).copy_from_slice(&row[..n_ceps]);
        u_d1.row_mut(t).copy_from_slice(&row[n_ceps..2 * n_ceps]);
        u_d2.row_mut(t).copy_from_slice(&row[2 * n_ceps..]);
    }
    let w = plan.cfg.delta_window;
    let inner = delta_vjp(&u_d2, w);
    for t in 0..t_len {
        let src = inner.row(t);
        let dst = u_d1.row_mut(t);
        for c in 0..n_ceps {
            dst[c] += src[c];
        }
    }
    let outer = delta_vjp(&u_d1, w);
    let mut ceps_bar = u_static;
    for t in 0..t_len {
        let src = outer.row(t);
        let dst = ceps_bar.row_mut(t);
        for c in 0..n_ceps {
            dst[c] += src[c];
        }
    }

    // Per-frame: DCT^T, log derivative, filterbank^T, spectrum pullback.
    let mut frame_grads: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut log_bar = vec![0.0; n_mels];
    let mut power_bar = vec![0.0; plan.n_bins];
    let mut z_re = vec![0.0; n_fft];
    let mut z_im = vec![0.0; n_fft];
    for t in 0..t_len {
        let cbar = ceps_bar.row(t);
        for m in 0..n_mels {
            let mut acc = 0.0;
            for j in 0..n_ceps {
                acc += cbar[j] * plan.dct_basis[j * n_mels + m];
            }
            log_bar[m] = acc;
        }

        // d/dE ln(max(E, floor)) = 1/E above the floor, 0 at or below it.
        let energies = trace.mel_energies.row(t);
        for m in 0..n_mels {
            log_bar[m] = if energies[m] > plan.cfg.log_floor {
                log_bar[m] / energies[m]
            } else {
                0.0
            };
        }

        for k in 0..plan.n_bins {
            power_bar[k] = 0.0;
        }
        for (m, row) in plan.filterbank.iter().enumerate() {
            let e_bar = log_bar[m];
            if e_bar != 0.0 {
                for (k, &h) in row.iter().enumerate() {
                    if h != 0.0 {
                        power_bar[k] += h * e_bar;
                    }
                }
            }
        }

        // P[k] = |X[k]|^2 / n_fft on bins 0..n_fft/2. With Z[k] =
        // P_bar[k] X[k] there and 0 beyond, the frame gradient is
        // (2/n_fft) Re(IDFT_unnorm(Z)).
        let re = &trace.spec_re[t * n_fft..(t + 1) * n_fft];
        let im = &trace.spec_im[t * n_fft..(t + 1) * n_fft];
        for k in 0..n_fft {
            if k < plan.n_bins {
                z_re[k] = power_bar[k] * re[k];
                z_im[k] = power_bar[k] * im[k];
            } else {
                z_re[k] = 0.0;
                z_im[k] = 0.0;
            }
        }
        plan.fft.process(&mut z_re, &mut z_im, true);
        let scale = 2.0 / n_fft as f64;
        frame_grads.push(z_re[..plan.frame_len].iter().map(|v| v * scale).collect());
    }

    let emphasized_bar = frame_window_vjp(&frame_grads, &plan.window, plan.hop, input_len);
    Ok(pre_emphasis_vjp(
        &emphasized_bar,
        plan.cfg.pre_emphasis_coeff,
    ))
}

/// Adjoint of windowed framing: scatter per-frame cotangents back onto the
/// signal, weighting by the window (overlap-add).
pub(crate) fn frame_window_vjp(
    frame_cotangents: &[Vec<f64>],
    window: &[f64],
    hop: usize,
    out_len: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (t, cot) in frame_cotangents.iter().enumerate() {
        let start = t * hop;
        for (n, &g) in cot.iter().enumerate() {
            out[start + n] += g * window[n];
        }
    }
    out
}

/// Adjoint of pre-emphasis `y[n] = x[n] - a x[n-1]`:
/// `x_bar[n] = y_bar[n] - a y_bar[n+1]`, last sample passes through.
pub(crate) fn pre_emphasis_vjp(y_bar: &[f64], coeff: f64) -> Vec<f64> {
    let n = y_bar.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = y_bar[i];
        if i + 1 < n {
            out[i] -= coeff * y_bar[i + 1];
        }
    }
    out
}

/// Evaluator bound to one clean clip: the base features `MF(x)` and the
/// plan are computed once, then reused across optimization iterations.
pub(crate) struct ObjectiveEval {
    plan: MfccPlan,
    base: FeatureMatrix,
    x: Vec<f64>,
    alpha: f64,
}

impl ObjectiveEval {
    pub fn new(x: &AudioClip, cfg: &MfccConfig, alpha: f64) -> Result<Self> {
        let plan = MfccPlan::new(cfg, x.sample_rate())?;
        let base = plan.forward(x.samples())?.features;
        Ok(Self {
            plan,
            base,
            x: x.samples().to_vec(),
            alpha,
        })
    }

    /// Objective value plus the forward trace at `x + delta`.
    pub fn forward(&self, delta: &[f64]) -> Result<(ObjectiveValue, ForwardTrace)> {
        if delta.len() != self.x.len() {
            return Err(Error::LengthMismatch {
                expected: self.x.len(),
                got: delta.len(),
            });
        }
        let perturbed: Vec<f64> = self.x.iter().zip(delta).map(|(a, d)| a + d).collect();
        let trace = self.plan.forward(&perturbed)?;
        let distance = feature_l2_distance(&trace.features, &self.base);
        let norm = l2(delta);
        Ok((
            ObjectiveValue {
                total: -distance + self.alpha * norm,
                feature_distance: distance,
                penalty: self.alpha * norm,
            },
            trace,
        ))
    }

    /// Gradient of the objective at the point the trace was computed for.
    pub fn gradient(
        &self,
        delta: &[f64],
        value: &ObjectiveValue,
        trace: &ForwardTrace,
    ) -> Result<Vec<f64>> {
        let mut grad = if value.feature_distance < DISTANCE_GUARD {
            vec![0.0; delta.len()]
        } else {
            let inv = 1.0 / value.feature_distance;
            let mut cot = FeatureMatrix::zeros(trace.features.frame_count(), trace.features.dim());
            for ((c, f), b) in cot
                .as_mut_slice()
                .iter_mut()
                .zip(trace.features.as_slice())
                .zip(self.base.as_slice())
            {
                *c = (f - b) * inv;
            }
            let mut g = backward(&self.plan, delta.len(), trace, &cot)?;
            for v in &mut g {
                *v = -*v;
            }
            g
        };
        let norm = l2(delta);
        if norm >= NORM_GUARD {
            let scale = self.alpha / norm;
            for (g, d) in grad.iter_mut().zip(delta) {
                *g += scale * d;
            }
        }
        Ok(grad)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn feature_l2_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Value and gradient of the poisoning objective at `delta`.
pub fn objective_and_grad(
    x: &AudioClip,
    delta: &[f64],
    cfg: &MfccConfig,
    alpha: f64,
) -> Result<(ObjectiveValue, Vec<f64>)> {
    let eval = ObjectiveEval::new(x, cfg, alpha)?;
    let (value, trace) = eval.forward(delta)?;
    let grad = eval.gradient(delta, &value, &trace)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfcc::{frame_and_window, mfcc};
    use crate::rng::Rng64;

    fn noise_clip(len: usize, amp: f64, seed: u64) -> AudioClip {
        let mut rng = Rng64::new(seed);
        AudioClip::new(
            (0..len).map(|_| amp * (2.0 * rng.next_f64() - 1.0)).collect(),
            16000,
        )
        .unwrap()
    }

    fn random_cotangent(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = Rng64::new(seed);
        let mut m = FeatureMatrix::zeros(rows, cols);
        for v in m.as_mut_slice() {
            *v = 2.0 * rng.next_f64() - 1.0;
        }
        m
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let clip = noise_clip(1600, 0.2, 3);
        let cfg = MfccConfig::default();
        let f = mfcc(&clip, &cfg).unwrap();
        let zero = FeatureMatrix::zeros(f.frame_count(), f.dim());
        let g = mfcc_vjp(&clip, &cfg, &zero).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_is_linear_in_cotangent() {
        let clip = noise_clip(1600, 0.2, 4);
        let cfg = MfccConfig::default();
        let f = mfcc(&clip, &cfg).unwrap();
        let u = random_cotangent(f.frame_count(), f.dim(), 10);
        let v = random_cotangent(f.frame_count(), f.dim(), 11);
        let mut uv = FeatureMatrix::zeros(f.frame_count(), f.dim());
        for ((s, a), b) in uv.as_mut_slice().iter_mut().zip(u.as_slice()).zip(v.as_slice()) {
            *s = a + b;
        }
        let gu = mfcc_vjp(&clip, &cfg, &u).unwrap();
        let gv = mfcc_vjp(&clip, &cfg, &v).unwrap();
        let guv = mfcc_vjp(&clip, &cfg, &uv).unwrap();
        for i in 0..gu.len() {
            let expect = gu[i] + gv[i];
            assert!(
                (guv[i] - expect).abs() <= 1e-10 * expect.abs().max(1e-6),
                "sample {i}: {} vs {expect}",
                guv[i]
            );
        }
    }

    #[test]
    fn vjp_shape_mismatch_is_rejected() {
        let clip = noise_clip(1600, 0.2, 5);
        let cfg = MfccConfig::default();
        let bad = FeatureMatrix::zeros(3, 39);
        assert!(matches!(
            mfcc_vjp(&clip, &cfg, &bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn vjp_matches_directional_finite_differences() {
        let cfg = MfccConfig::default();
        for seed in 0..20u64 {
            let clip = noise_clip(1600, 0.2, 100 + seed);
            let f = mfcc(&clip, &cfg).unwrap();
            let cot = random_cotangent(f.frame_count(), f.dim(), 200 + seed);
            let g = mfcc_vjp(&clip, &cfg, &cot).unwrap();

            let mut rng = Rng64::new(300 + seed);
            let mut dir: Vec<f64> = (0..clip.len()).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let dn = l2(&dir);
            for d in &mut dir {
                *d /= dn;
            }

            let h = 1e-5;
            let probe = |scale: f64| -> f64 {
                let shifted: Vec<f64> = clip
                    .samples()
                    .iter()
                    .zip(&dir)
                    .map(|(s, d)| s + scale * d)
                    .collect();
                let plan = MfccPlan::new(&cfg, clip.sample_rate()).unwrap();
                let feats = plan.forward(&shifted).unwrap().features;
                feats
                    .as_slice()
                    .iter()
                    .zip(cot.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-10);
            assert!(rel < 1e-5, "seed {seed}: fd {fd} vs analytic {analytic}, rel {rel}");
        }
    }

    #[test]
    fn framing_adjointness() {
        let cfg = MfccConfig::default();
        let x = noise_clip(2000, 0.5, 42);
        let frames = frame_and_window(x.samples(), &cfg, 16000).unwrap();
        let mut rng = Rng64::new(43);
        let cots: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| f.iter().map(|_| 2.0 * rng.next_f64() - 1.0).collect())
            .collect();
        let lhs: f64 = frames
            .iter()
            .zip(&cots)
            .flat_map(|(f, c)| f.iter().zip(c))
            .map(|(a, b)| a * b)
            .sum();
        let window = crate::mfcc::hamming_window(cfg.frame_samples(16000));
        let pulled = frame_window_vjp(&cots, &window, cfg.hop_samples(16000), x.len());
        let rhs: f64 = x.samples().iter().zip(&pulled).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn objective_at_zero_delta_is_zero_with_zero_gradient() {
        let clip = noise_clip(1600, 0.3, 6);
        let cfg = MfccConfig::default();
        let delta = vec![0.0; clip.len()];
        let (value, grad) = objective_and_grad(&clip, &delta, &cfg, 0.5).unwrap();
        assert_eq!(value.total, 0.0);
        assert_eq!(value.feature_distance, 0.0);
        assert_eq!(value.penalty, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn objective_alpha_zero_is_negated_distance() {
        let clip = noise_clip(1600, 0.3, 7);
        let cfg = MfccConfig::default();
        let mut rng = Rng64::new(8);
        let delta: Vec<f64> = (0..clip.len()).map(|_| 1e-3 * rng.next_gaussian()).collect();
        let (value, _) = objective_and_grad(&clip, &delta, &cfg, 0.0).unwrap();
        assert_eq!(value.total, -value.feature_distance);
        assert_eq!(value.penalty, 0.0);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let cfg = MfccConfig::default();
        let alpha = 0.1;
        for seed in 0..3u64 {
            let clip = noise_clip(1600, 0.25, 400 + seed);
            let mut rng = Rng64::new(500 + seed);
            let delta: Vec<f64> = (0..clip.len()).map(|_| 2e-3 * rng.next_gaussian()).collect();
            let (_, grad) = objective_and_grad(&clip, &delta, &cfg, alpha).unwrap();

            let mut dir: Vec<f64> = (0..clip.len()).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let dn = l2(&dir);
            for d in &mut dir {
                *d /= dn;
            }
            let h = 1e-5;
            let probe = |scale: f64| -> f64 {
                let d: Vec<f64> = delta.iter().zip(&dir).map(|(v, u)| v + scale * u).collect();
                let eval = ObjectiveEval::new(&clip, &cfg, alpha).unwrap();
                eval.forward(&d).unwrap().0.total
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-10);
            assert!(rel < 1e-5, "seed {seed}: fd {fd} vs analytic {analytic}");
        }
    }

    #[test]
    fn objective_length_mismatch_is_rejected() {
        let clip = noise_clip(1600, 0.3, 9);
        let cfg = MfccConfig::default();
        assert!(matches!(
            objective_and_grad(&clip, &[0.0; 10], &cfg, 0.1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn small_step_along_negative_gradient_does_not_increase_objective() {
        let cfg = MfccConfig::default();
        let clip = noise_clip(1600, 0.3, 77);
        let mut rng = Rng64::new(78);
        let delta: Vec<f64> = (0..clip.len()).map(|_| 1e-3 * rng.next_gaussian()).collect();
        let eval = ObjectiveEval::new(&clip, &cfg, 0.1).unwrap();
        let (value, trace) = eval.forward(&delta).unwrap();
        let grad = eval.gradient(&delta, &value, &trace).unwrap();
        let gnorm = l2(&grad);
        assert!(gnorm > 0.0);
        let step = 1e-7 / gnorm;
        let stepped: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d - step * g).collect();
        let (after, _) = eval.forward(&stepped).unwrap();
        assert!(
            after.total <= value.total + 1e-12,
            "{} -> {}",
            value.total,
            after.total
        );
    }
}
