//! Waveform perturbation by iterated Adam steps on the feature-distance
//! objective, plus the SNR-matched Gaussian noise reference.
//!
//! The loop keeps updating `delta` along the negative objective gradient
//! until the MFCC distance between the perturbed and the clean clip reaches
//! `epsilon` (checked at loop entry, before stepping) or the iteration
//! budget runs out. After every step the perturbed waveform is clamped into
//! `[-1, 1]` and `delta` is adjusted to the clamped difference, so the
//! result is always a writable clip.

use serde::Deserialize;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::grad::{ObjectiveEval, ObjectiveValue};
use crate::mfcc::{FeatureMatrix, MfccConfig, MfccPlan};
use crate::optim::Adam;
use crate::rng::Rng64;
use crate::{metrics, rng};

/// Attack hyperparameters.
///
/// `epsilon` is the feature-distance stopping threshold, `alpha` trades
/// attack strength against perturbation size, `init_sigma_rel` scales the
/// Gaussian initialization of `delta` relative to the clip RMS (a zero
/// start is a stationary point of the objective, so it must stay positive
/// for the attack to move), and `input_l2_budget` is an optional
/// reporting-only bound on the final waveform-space perturbation norm.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisonConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: usize,
    pub init_sigma_rel: f64,
    pub seed: u64,
    pub input_l2_budget: Option<f64>,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            alpha: 0.1,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_iters: 2000,
            init_sigma_rel: 1e-3,
            seed: 0,
            input_l2_budget: None,
        }
    }
}

impl PoisonConfig {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return fail(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be >= 1".into());
        }
        if self.init_sigma_rel.is_nan() || self.init_sigma_rel < 0.0 {
            return fail(format!(
                "init_sigma_rel must be >= 0, got {}",
                self.init_sigma_rel
            ));
        }
        Ok(())
    }
}

/// Outcome of one attack (or baseline) run.
#[derive(Debug, Clone)]
pub struct PoisonResult {
    /// The perturbed clip, clamped into `[-1, 1]`.
    pub poisoned: AudioClip,
    /// Final perturbation; equals `poisoned - clean` elementwise.
    pub delta: Vec<f64>,
    /// Adam steps taken.
    pub iterations_used: usize,
    /// Whether the feature distance reached `epsilon`.
    pub converged: bool,
    /// `|| MF(poisoned) - MF(clean) ||_2` at the final iterate.
    pub feature_distance: f64,
    /// Realized SNR of the perturbation in dB.
    pub snr_db: f64,
    /// `||delta||_2`, for the optional input-space budget report.
    pub input_l2: f64,
    /// Objective decomposition at every visited iterate (including the
    /// final one).
    pub objective_trace: Vec<ObjectiveValue>,
}

/// Run the attack on one clip. Deterministic given `pcfg.seed`.
pub fn poison(x: &AudioClip, pcfg: &PoisonConfig, mcfg: &MfccConfig) -> Result<PoisonResult> {
    poison_with_observer(x, pcfg, mcfg, |_, _, _| false)
}

/// [`poison`] with a per-iterate hook: the observer sees the iteration
/// index, the objective at the current `delta`, and the current feature
/// matrix `MF(x + delta)`; returning `true` stops the loop early (used by
/// epsilon calibration to detect label flips).
pub fn poison_with_observer(
    x: &AudioClip,
    pcfg: &PoisonConfig,
    mcfg: &MfccConfig,
    mut observer: impl FnMut(usize, &ObjectiveValue, &FeatureMatrix) -> bool,
) -> Result<PoisonResult> {
    pcfg.validate()?;
    let eval = ObjectiveEval::new(x, mcfg, pcfg.alpha)?;
    let n = x.len();
    let clean = x.samples();

    let mut delta = vec![0.0; n];
    let sigma = pcfg.init_sigma_rel * x.rms();
    if sigma > 0.0 {
        let mut rng = Rng64::new(pcfg.seed);
        for d in &mut delta {
            *d = sigma * rng.next_gaussian();
        }
        clamp_delta(clean, &mut delta);
    }

    let mut adam = Adam::new(
        n,
        pcfg.learning_rate,
        pcfg.adam_beta1,
        pcfg.adam_beta2,
        pcfg.adam_eps,
    );
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let converged;
    let last_distance;
    loop {
        let (value, fwd) = eval.forward(&delta)?;
        if !value.total.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: iterations,
            });
        }
        trace.push(value);
        if observer(iterations, &value, &fwd.features) {
            converged = value.feature_distance >= pcfg.epsilon;
            last_distance = value.feature_distance;
            break;
        }
        if value.feature_distance >= pcfg.epsilon {
            converged = true;
            last_distance = value.feature_distance;
            break;
        }
        if iterations == pcfg.max_iters {
            converged = false;
            last_distance = value.feature_distance;
            break;
        }
        let grad = eval.gradient(&delta, &value, &fwd)?;
        adam.update(&mut delta, &grad);
        clamp_delta(clean, &mut delta);
        iterations += 1;
    }

    finish_result(x, delta, iterations, converged, last_distance, trace)
}

/// Gaussian noise reference: i.i.d. noise scaled for a target SNR, no
/// optimization. `converged` is always false and reported metrics describe
/// the realized perturbation.
pub fn random_noise_baseline(
    x: &AudioClip,
    target_snr_db: f64,
    seed: u64,
    mcfg: &MfccConfig,
) -> Result<PoisonResult> {
    if !target_snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target SNR must be finite, got {target_snr_db}"
        )));
    }
    let sigma = noise_sigma(x.rms(), target_snr_db);
    let mut rng = Rng64::new(seed);
    let mut delta: Vec<f64> = (0..x.len()).map(|_| sigma * rng.next_gaussian()).collect();
    clamp_delta(x.samples(), &mut delta);

    let plan = MfccPlan::new(mcfg, x.sample_rate())?;
    let base = plan.forward(x.samples())?.features;
    let perturbed: Vec<f64> = x.samples().iter().zip(&delta).map(|(s, d)| s + d).collect();
    let noisy = plan.forward(&perturbed)?.features;
    let distance = metrics::feature_distance(&base, &noisy)?;
    finish_result(x, delta, 0, false, distance, Vec::new())
}

/// Noise scale for a target SNR: `sigma = rms * 10^(-snr_db / 20)`.
pub(crate) fn noise_sigma(rms: f64, target_snr_db: f64) -> f64 {
    rms * 10f64.powf(-target_snr_db / 20.0)
}

/// Derive the per-clip seed for batch runs from a global seed and the clip
/// index; scheduling-independent by construction.
pub fn per_clip_seed(global_seed: u64, clip_index: u64) -> u64 {
    rng::derive_seed(global_seed, clip_index)
}

fn clamp_delta(clean: &[f64], delta: &mut [f64]) {
    for (d, &s) in delta.iter_mut().zip(clean) {
        *d = (s + *d).clamp(-1.0, 1.0) - s;
    }
}

fn finish_result(
    x: &AudioClip,
    delta: Vec<f64>,
    iterations_used: usize,
    converged: bool,
    feature_distance: f64,
    objective_trace: Vec<ObjectiveValue>,
) -> Result<PoisonResult> {
    let samples: Vec<f64> = x
        .samples()
        .iter()
        .zip(&delta)
        .map(|(s, d)| (s + d).clamp(-1.0, 1.0))
        .collect();
    let poisoned = AudioClip::new(samples, x.sample_rate())?;
    let input_l2 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    let snr_db = match metrics::snr_db(x.samples(), poisoned.samples()) {
        Ok(v) => v,
        // Zero-power clean input: report the infinity of matching sign.
        Err(Error::UndefinedSnr) => {
            if input_l2 == 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(e) => return Err(e),
    };
    Ok(PoisonResult {
        poisoned,
        delta,
        iterations_used,
        converged,
        feature_distance,
        snr_db,
        input_l2,
        objective_trace,
    })
}
