//! Desk-scale evaluation harness: synthetic labeled audio, a multinomial
//! logistic-regression classifier over time-averaged MFCC features, poisoning
//! experiments (from-scratch and fine-tune), and substitute-model epsilon
//! calibration.
//!
//! The harness exists to check the method's *directional* claims — attack
//! beats matched-SNR noise, damage grows with the poison rate, fine-tuning
//! on poisoned data hurts more — at a scale where a full run takes minutes,
//! not GPU-days. Everything is seed-deterministic.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mfcc::{mfcc, MfccConfig};
use crate::poison::{poison, poison_with_observer, random_noise_baseline, PoisonConfig, PoisonResult};
use crate::rng::{derive_seed, Rng64};
use crate::{metrics, parallel};

/// Train/test membership of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A synthetic labeled audio dataset with a stratified 80/20 split.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub n_classes: usize,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == Split::Train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == Split::Test).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.clips.len() != self.labels.len() || self.clips.len() != self.split.len() {
            return Err(Error::InvalidArgument(
                "clips, labels and split tags must be co-indexed".into(),
            ));
        }
        for class in 0..self.n_classes {
            let has = |s: Split| {
                self.labels
                    .iter()
                    .zip(&self.split)
                    .any(|(&l, &tag)| l == class && tag == s)
            };
            if !has(Split::Train) || !has(Split::Test) {
                return Err(Error::InvalidArgument(format!(
                    "class {class} is missing a train or test clip"
                )));
            }
        }
        Ok(())
    }
}

/// Per-class signal family: a loud carrier chord shared by every class plus
/// a quiet class-specific marker tone, over a faint Gaussian background.
///
/// The carrier holds most of the energy but carries no label information;
/// the label lives in the low-amplitude marker, the way discriminative
/// detail in speech sits well below the voiced energy. A narrowband marker
/// stays far above the per-bin density of any broadband noise of moderate
/// total power, so corrupting it requires spectrally concentrated,
/// signal-adaptive perturbation rather than plain noise.
fn class_signal(class: usize, duration_s: f64, sample_rate: u32, rng: &mut Rng64) -> Vec<f64> {
    use std::f64::consts::PI;
    let n = (duration_s * sample_rate as f64).round() as usize;
    let nyquist = sample_rate as f64 / 2.0;

    let amp = 0.85 + 0.15 * rng.next_f64();
    let mut fjit = || 1.0 + 0.04 * (rng.next_f64() - 0.5);
    let carrier = [
        (330.0 * fjit(), 0.42 * amp),
        (467.0 * fjit(), 0.28 * amp),
        (660.0 * fjit(), 0.14 * amp),
    ];
    // Markers spaced a few mel channels apart, clamped below Nyquist.
    let marker_hz = (2350.0 + 330.0 * class as f64).min(0.9 * nyquist) * fjit();
    let dropout = rng.next_f64() < 0.04;
    let marker_amp =
        0.080 * amp * (0.55 * rng.next_gaussian()).exp() * if dropout { 0.003 } else { 1.0 };

    let phases: Vec<f64> = (0..4).map(|_| 2.0 * PI * rng.next_f64()).collect();
    let dt = 1.0 / sample_rate as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let mut s = 0.0;
        for (j, &(freq, a)) in carrier.iter().enumerate() {
            s += a * (2.0 * PI * freq * t + phases[j]).sin();
        }
        s += marker_amp * (2.0 * PI * marker_hz * t + phases[3]).sin();
        out.push(s);
    }

    // 40 dB background relative to the tonal RMS: audible floor for the
    // feature extractor, negligible next to the marker's bin energy.
    let rms = (out.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    let sigma = rms * 10f64.powf(-40.0 / 20.0);
    for s in &mut out {
        *s += sigma * rng.next_gaussian();
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.9 {
        let k = 0.9 / peak;
        for s in &mut out {
            *s *= k;
        }
    }
    out
}

/// Synthesize a dataset: `n_classes * clips_per_class` clips with a
/// class-stratified 80/20 train/test split. Bit-deterministic per seed.
pub fn generate_dataset(
    n_classes: usize,
    clips_per_class: usize,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if clips_per_class < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clips per class, got {clips_per_class}"
        )));
    }
    if duration_s.is_nan() || duration_s <= 0.0 || sample_rate == 0 {
        return Err(Error::InvalidArgument(
            "duration and sample rate must be positive".into(),
        ));
    }
    let mut clips = Vec::with_capacity(n_classes * clips_per_class);
    let mut labels = Vec::with_capacity(n_classes * clips_per_class);
    let mut split = Vec::with_capacity(n_classes * clips_per_class);
    let n_train = ((0.8 * clips_per_class as f64).round() as usize)
        .clamp(1, clips_per_class - 1);
    for class in 0..n_classes {
        for j in 0..clips_per_class {
            let clip_seed = derive_seed(seed, (class * clips_per_class + j) as u64);
            let mut rng = Rng64::new(clip_seed);
            let samples = class_signal(class, duration_s, sample_rate, &mut rng);
            clips.push(AudioClip::new(samples, sample_rate)?);
            labels.push(class);
            split.push(if j < n_train { Split::Train } else { Split::Test });
        }
    }
    let dataset = LabeledDataset {
        clips,
        labels,
        split,
        n_classes,
        seed,
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

/// Training hyperparameters for the logistic-regression classifier.
/// Training is full-batch from zero weights, so it is deterministic; the
/// seed is carried for bookkeeping in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            epochs: 300,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over bias-augmented feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// Row-major `(n_features + 1) x n_classes`; the last row is the bias.
    weights: Vec<f64>,
    n_features: usize,
    n_classes: usize,
}

impl Classifier {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_features, "feature dimension mismatch");
        let k = self.n_classes;
        let mut out = vec![0.0; k];
        for (f, &v) in x.iter().enumerate() {
            let row = &self.weights[f * k..(f + 1) * k];
            for c in 0..k {
                out[c] += row[c] * v;
            }
        }
        let bias = &self.weights[self.n_features * k..];
        for c in 0..k {
            out[c] += bias[c];
        }
        out
    }

    /// Predicted class index; ties break toward the lower index.
    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits(features);
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Accuracy in percent over a feature/label set.
    pub fn accuracy_percent(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        100.0 * hits as f64 / labels.len() as f64
    }
}

/// Time-averaged MFCC feature vector of a clip (the classifier input).
pub fn time_averaged_features(clip: &AudioClip, mcfg: &MfccConfig) -> Result<Vec<f64>> {
    Ok(mfcc(clip, mcfg)?.column_means())
}

/// Full-batch softmax cross-entropy gradient descent, continuing from the
/// given weights in place.
fn gd_epochs(
    weights: &mut [f64],
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    lr: f64,
    epochs: usize,
) -> Result<()> {
    let n = features.len();
    let d = features.first().map_or(0, |f| f.len());
    let k = n_classes;
    let mut grad = vec![0.0; (d + 1) * k];
    let mut probs = vec![0.0; k];
    for epoch in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            for c in 0..k {
                let mut z = weights[d * k + c];
                for (f, &v) in x.iter().enumerate() {
                    z += weights[f * k + c] * v;
                }
                probs[c] = z;
            }
            let zmax = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - zmax).exp();
                denom += *p;
            }
            for p in probs.iter_mut() {
                *p /= denom;
            }
            loss -= probs[y].max(1e-300).ln();
            for c in 0..k {
                let coef = probs[c] - if c == y { 1.0 } else { 0.0 };
                for (f, &v) in x.iter().enumerate() {
                    grad[f * k + c] += coef * v;
                }
                grad[d * k + c] += coef;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let scale = lr / n as f64;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }
    Ok(())
}

/// Train a classifier from zero weights on explicit feature vectors.
pub fn train_on_features(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    hyper: &TrainConfig,
) -> Result<Classifier> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "features and labels must be non-empty and co-indexed".into(),
        ));
    }
    let d = features[0].len();
    let mut clf = Classifier {
        weights: vec![0.0; (d + 1) * n_classes],
        n_features: d,
        n_classes,
    };
    gd_epochs(
        &mut clf.weights,
        features,
        labels,
        n_classes,
        hyper.learning_rate,
        hyper.epochs,
    )?;
    Ok(clf)
}

/// Train on the train split of a dataset, featurizing with `mcfg`.
pub fn train_classifier(
    dataset: &LabeledDataset,
    mcfg: &MfccConfig,
    hyper: &TrainConfig,
) -> Result<Classifier> {
    let idx = dataset.train_indices();
    let mut features = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for i in idx {
        features.push(time_averaged_features(&dataset.clips[i], mcfg)?);
        labels.push(dataset.labels[i]);
    }
    train_on_features(&features, &labels, dataset.n_classes, hyper)
}

// ---------------------------------------------------------------------------
// Poisoning experiments
// ---------------------------------------------------------------------------

/// How the hacker consumes the (partially poisoned) data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Pre-train on clean data, then continue training on the poisoned
    /// subset only.
    FineTune,
    /// Train once on the train split with a fraction of clips rewritten by
    /// their poisoned versions (labels untouched).
    FromScratch,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::FineTune => "fine_tune",
            Scenario::FromScratch => "from_scratch",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine_tune" | "fine-tune" => Ok(Scenario::FineTune),
            "from_scratch" | "from-scratch" => Ok(Scenario::FromScratch),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario {other:?}; use fine-tune or from-scratch"
            ))),
        }
    }
}

/// Perturbation generator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoisonMethod {
    /// The gradient attack.
    WaveFuzz,
    /// Gaussian noise with per-clip SNR matched to the cached attack run on
    /// the same subset.
    NoiseMatchedSnr,
    /// Gaussian noise at a fixed target SNR in dB.
    NoiseFixedSnr(f64),
}

impl PoisonMethod {
    pub fn label(&self) -> String {
        match self {
            PoisonMethod::WaveFuzz => "wavefuzz".into(),
            PoisonMethod::NoiseMatchedSnr => "noise_matched_snr".into(),
            PoisonMethod::NoiseFixedSnr(db) => format!("noise_{db}db"),
        }
    }
}

/// Aggregated outcome of one (scenario, method, poison-rate) cell.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub method: String,
    pub pr_percent: f64,
    pub acc_clean_percent: f64,
    pub acc_poisoned_percent: f64,
    pub dacc_percent: f64,
    pub mean_snr_db: f64,
    /// Stopping threshold; relative to each clip's clean feature norm when
    /// `epsilon_is_relative` is set.
    pub epsilon: f64,
    pub epsilon_is_relative: bool,
    pub alpha: f64,
    /// Per-repetition root seeds actually used.
    pub seeds: Vec<u64>,
}

/// Harness knobs that are not part of the attack itself.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// When set, each clip's stopping threshold is
    /// `epsilon_rel * ||MF(clip)||_2` instead of the absolute
    /// `PoisonConfig::epsilon`.
    pub epsilon_rel: Option<f64>,
    /// Fine-tuning epoch budget as a fraction of the pre-training epochs.
    pub fine_tune_fraction: f64,
    /// Worker threads for per-clip poisoning.
    pub jobs: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            epsilon_rel: None,
            fine_tune_fraction: 0.25,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// One poisoned train subset: selected train indices (sorted) and the
/// per-clip attack or baseline outcomes, co-indexed.
#[derive(Debug, Clone)]
pub struct SubsetPoison {
    pub indices: Vec<usize>,
    pub results: Vec<PoisonResult>,
}

/// Experiment driver bound to one dataset. Clean features are extracted
/// once; attack runs are cached per (repetition, poison rate) so that
/// matched-SNR baselines and multi-scenario sweeps reuse them.
pub struct ExperimentEngine<'a> {
    dataset: &'a LabeledDataset,
    mcfg: MfccConfig,
    hyper: TrainConfig,
    pcfg: PoisonConfig,
    options: EngineOptions,
    clean_features: Vec<Vec<f64>>,
    base_norms: Vec<f64>,
    train_idx: Vec<usize>,
    test_features: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
    cache: Mutex<HashMap<(usize, u64), std::sync::Arc<SubsetPoison>>>,
}

impl<'a> ExperimentEngine<'a> {
    pub fn new(
        dataset: &'a LabeledDataset,
        mcfg: &MfccConfig,
        hyper: &TrainConfig,
        pcfg: &PoisonConfig,
        options: EngineOptions,
    ) -> Result<Self> {
        dataset.validate()?;
        let mut clean_features = Vec::with_capacity(dataset.len());
        let mut base_norms = Vec::with_capacity(dataset.len());
        for clip in &dataset.clips {
            let f = mfcc(clip, mcfg)?;
            base_norms.push(f.l2_norm());
            clean_features.push(f.column_means());
        }
        let train_idx = dataset.train_indices();
        let test_idx = dataset.test_indices();
        let test_features = test_idx.iter().map(|&i| clean_features[i].clone()).collect();
        let test_labels = test_idx.iter().map(|&i| dataset.labels[i]).collect();
        Ok(Self {
            dataset,
            mcfg: mcfg.clone(),
            hyper: hyper.clone(),
            pcfg: pcfg.clone(),
            options,
            clean_features,
            base_norms,
            train_idx,
            test_features,
            test_labels,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Test accuracy of a classifier trained on the clean train split; the
    /// separability prerequisite for any poisoning measurement.
    pub fn clean_test_accuracy(&self) -> Result<f64> {
        let (features, labels) = self.train_view(&[], &[]);
        let clf = train_on_features(&features, &labels, self.dataset.n_classes, &self.hyper)?;
        Ok(clf.accuracy_percent(&self.test_features, &self.test_labels))
    }

    fn n_poison(&self, pr_percent: f64) -> Result<usize> {
        if !(pr_percent > 0.0 && pr_percent <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "poison rate must be in (0, 100], got {pr_percent}"
            )));
        }
        let n = (pr_percent / 100.0 * self.train_idx.len() as f64).round() as usize;
        if n == 0 {
            return Err(Error::PoisonRateTooLow {
                pr_percent,
                n_train: self.train_idx.len(),
            });
        }
        Ok(n.min(self.train_idx.len()))
    }

    fn run_seed(&self, seed_idx: usize) -> u64 {
        derive_seed(self.pcfg.seed, seed_idx as u64)
    }

    /// Seeded draw of the poisoned subset for one repetition.
    fn select_indices(&self, seed_idx: usize, n_poison: usize) -> Vec<usize> {
        let mut rng = Rng64::new(derive_seed(self.run_seed(seed_idx), u64::MAX));
        let mut pool = self.train_idx.clone();
        // Partial Fisher-Yates: the first n_poison slots become the draw.
        for i in 0..n_poison {
            let j = i + rng.next_below(pool.len() - i);
            pool.swap(i, j);
        }
        let mut chosen = pool[..n_poison].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn clip_epsilon(&self, clip_index: usize) -> f64 {
        match self.options.epsilon_rel {
            Some(rel) => rel * self.base_norms[clip_index],
            None => self.pcfg.epsilon,
        }
    }

    /// Attack the subset for the given repetition, with caching.
    pub fn wavefuzz_subset(
        &self,
        seed_idx: usize,
        pr_percent: f64,
    ) -> Result<std::sync::Arc<SubsetPoison>> {
        let key = (seed_idx, pr_percent.to_bits());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let n_poison = self.n_poison(pr_percent)?;
        let indices = self.select_indices(seed_idx, n_poison);
        let run_seed = self.run_seed(seed_idx);
        let results: Result<Vec<PoisonResult>> =
            parallel::map(&indices, self.options.jobs, |_, &i| {
                let pcfg = PoisonConfig {
                    epsilon: self.clip_epsilon(i),
                    seed: derive_seed(run_seed, i as u64),
                    ..self.pcfg.clone()
                };
                poison(&self.dataset.clips[i], &pcfg, &self.mcfg)
            })
            .into_iter()
            .collect();
        let subset = std::sync::Arc::new(SubsetPoison {
            indices,
            results: results?,
        });
        self.cache.lock().unwrap().insert(key, subset.clone());
        Ok(subset)
    }

    /// Gaussian-noise rendition of the same subset. Matched mode reads the
    /// realized SNR of the cached attack on each clip.
    fn noise_subset(
        &self,
        seed_idx: usize,
        pr_percent: f64,
        target: Option<f64>,
    ) -> Result<SubsetPoison> {
        let run_seed = self.run_seed(seed_idx);
        // Separate seed domain so noise draws are independent of the
        // attack's initialization draws.
        let noise_seed = derive_seed(run_seed, 0x6E6F_6973_6500);
        let (indices, targets): (Vec<usize>, Vec<f64>) = match target {
            Some(db) => {
                let n = self.n_poison(pr_percent)?;
                let idx = self.select_indices(seed_idx, n);
                let t = vec![db; idx.len()];
                (idx, t)
            }
            None => {
                let wf = self.wavefuzz_subset(seed_idx, pr_percent)?;
                let t = wf.results.iter().map(|r| r.snr_db).collect();
                (wf.indices.clone(), t)
            }
        };
        let results: Result<Vec<PoisonResult>> =
            parallel::map(&indices, self.options.jobs, |slot, &i| {
                let db = targets[slot];
                if db.is_finite() {
                    random_noise_baseline(
                        &self.dataset.clips[i],
                        db,
                        derive_seed(noise_seed, i as u64),
                        &self.mcfg,
                    )
                } else {
                    // Matched to a zero perturbation: reuse the clean clip.
                    random_noise_baseline(
                        &self.dataset.clips[i],
                        300.0,
                        derive_seed(noise_seed, i as u64),
                        &self.mcfg,
                    )
                }
            })
            .into_iter()
            .collect();
        Ok(SubsetPoison {
            indices,
            results: results?,
        })
    }

    fn subset_for(
        &self,
        method: PoisonMethod,
        seed_idx: usize,
        pr_percent: f64,
    ) -> Result<std::sync::Arc<SubsetPoison>> {
        match method {
            PoisonMethod::WaveFuzz => self.wavefuzz_subset(seed_idx, pr_percent),
            PoisonMethod::NoiseMatchedSnr => Ok(std::sync::Arc::new(self.noise_subset(
                seed_idx,
                pr_percent,
                None,
            )?)),
            PoisonMethod::NoiseFixedSnr(db) => Ok(std::sync::Arc::new(self.noise_subset(
                seed_idx,
                pr_percent,
                Some(db),
            )?)),
        }
    }

    /// Clean train features with the subset's clips rewritten by their
    /// poisoned versions. Labels are the original ones: clean-label.
    fn train_view(&self, indices: &[usize], results: &[PoisonResult]) -> (Vec<Vec<f64>>, Vec<usize>) {
        let features = self
            .train_idx
            .iter()
            .map(|&i| match indices.binary_search(&i) {
                Ok(slot) => time_averaged_features(&results[slot].poisoned, &self.mcfg)
                    .expect("poisoned clip featurization cannot fail after clean featurization"),
                Err(_) => self.clean_features[i].clone(),
            })
            .collect();
        let labels = self.train_idx.iter().map(|&i| self.dataset.labels[i]).collect();
        (features, labels)
    }

    /// (clean accuracy, poisoned accuracy) on the test split for one
    /// repetition of a scenario.
    pub(crate) fn scenario_accuracies(
        &self,
        scenario: Scenario,
        subset: &SubsetPoison,
    ) -> Result<(f64, f64)> {
        let k = self.dataset.n_classes;
        match scenario {
            Scenario::FromScratch => {
                let (clean_f, labels) = self.train_view(&[], &[]);
                let control = train_on_features(&clean_f, &labels, k, &self.hyper)?;
                let acc_clean = control.accuracy_percent(&self.test_features, &self.test_labels);

                let (poisoned_f, labels) = self.train_view(&subset.indices, &subset.results);
                let poisoned_clf = train_on_features(&poisoned_f, &labels, k, &self.hyper)?;
                let acc_poisoned =
                    poisoned_clf.accuracy_percent(&self.test_features, &self.test_labels);
                Ok((acc_clean, acc_poisoned))
            }
            Scenario::FineTune => {
                let (clean_f, labels) = self.train_view(&[], &[]);
                let mut clf = train_on_features(&clean_f, &labels, k, &self.hyper)?;
                let acc_clean = clf.accuracy_percent(&self.test_features, &self.test_labels);

                let ft_features: Vec<Vec<f64>> = subset
                    .results
                    .iter()
                    .map(|r| time_averaged_features(&r.poisoned, &self.mcfg))
                    .collect::<Result<_>>()?;
                let ft_labels: Vec<usize> = subset
                    .indices
                    .iter()
                    .map(|&i| self.dataset.labels[i])
                    .collect();
                let ft_epochs =
                    ((self.hyper.epochs as f64 * self.options.fine_tune_fraction).round() as usize)
                        .max(1);
                gd_epochs(
                    &mut clf.weights,
                    &ft_features,
                    &ft_labels,
                    k,
                    self.hyper.learning_rate,
                    ft_epochs,
                )?;
                let acc_poisoned = clf.accuracy_percent(&self.test_features, &self.test_labels);
                Ok((acc_clean, acc_poisoned))
            }
        }
    }

    /// Run one (scenario, method, poison rate) cell, averaged over
    /// `n_seeds` repetitions.
    pub fn run_cell(
        &self,
        scenario: Scenario,
        method: PoisonMethod,
        pr_percent: f64,
        n_seeds: usize,
    ) -> Result<ExperimentReport> {
        if n_seeds == 0 {
            return Err(Error::InvalidArgument("n_seeds must be >= 1".into()));
        }
        let mut acc_clean = Vec::with_capacity(n_seeds);
        let mut acc_poisoned = Vec::with_capacity(n_seeds);
        let mut snrs = Vec::new();
        let mut seeds = Vec::with_capacity(n_seeds);
        for seed_idx in 0..n_seeds {
            let subset = self.subset_for(method, seed_idx, pr_percent)?;
            let (clean, poisoned) = self.scenario_accuracies(scenario, &subset)?;
            acc_clean.push(clean);
            acc_poisoned.push(poisoned);
            snrs.extend(subset.results.iter().map(|r| r.snr_db).filter(|s| s.is_finite()));
            seeds.push(self.run_seed(seed_idx));
        }
        // Order-insensitive aggregation.
        for v in [&mut acc_clean, &mut acc_poisoned, &mut snrs] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mean_clean = mean(&acc_clean);
        let mean_poisoned = mean(&acc_poisoned);
        Ok(ExperimentReport {
            scenario,
            method: method.label(),
            pr_percent,
            acc_clean_percent: mean_clean,
            acc_poisoned_percent: mean_poisoned,
            dacc_percent: metrics::dacc(mean_clean, mean_poisoned),
            mean_snr_db: if snrs.is_empty() { f64::INFINITY } else { mean(&snrs) },
            epsilon: self.options.epsilon_rel.unwrap_or(self.pcfg.epsilon),
            epsilon_is_relative: self.options.epsilon_rel.is_some(),
            alpha: self.pcfg.alpha,
            seeds,
        })
    }
}

/// Run a full poisoning experiment for one scenario, method, and poison
/// rate; see [`ExperimentEngine`] for the sweep-oriented interface that
/// shares attack runs across cells.
#[allow(clippy::too_many_arguments)]
pub fn run_poison_experiment(
    scenario: Scenario,
    dataset: &LabeledDataset,
    pr_percent: f64,
    pcfg: &PoisonConfig,
    mcfg: &MfccConfig,
    hyper: &TrainConfig,
    n_seeds: usize,
    method: PoisonMethod,
) -> Result<ExperimentReport> {
    let engine = ExperimentEngine::new(dataset, mcfg, hyper, pcfg, EngineOptions::default())?;
    engine.run_cell(scenario, method, pr_percent, n_seeds)
}

// ---------------------------------------------------------------------------
// Epsilon calibration
// ---------------------------------------------------------------------------

/// Outcome of substitute-model calibration.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    /// Selected threshold: the requested quantile of flip distances.
    pub epsilon: f64,
    /// Clips whose substitute prediction flipped within the budget.
    pub n_flipped: usize,
    /// Clips that never flipped (excluded from the quantile).
    pub n_excluded: usize,
    /// Sorted feature distances at the first prediction flip.
    pub flip_distances: Vec<f64>,
}

/// Linear-interpolation quantile of a sorted sample.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Pick an attack threshold by watching a substitute model: drive each clip
/// with an uncapped attack and record the feature distance at the first
/// iterate where the substitute's prediction leaves the clean prediction;
/// return the requested quantile (0.5 = median) of those flip distances.
pub fn calibrate_epsilon(
    substitute: &Classifier,
    calibration_clips: &[AudioClip],
    pcfg_template: &PoisonConfig,
    mcfg: &MfccConfig,
    quantile_q: f64,
) -> Result<Calibration> {
    if calibration_clips.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 calibration clips, got {}",
            calibration_clips.len()
        )));
    }
    if !(0.0..=1.0).contains(&quantile_q) {
        return Err(Error::InvalidArgument(format!(
            "quantile must be in [0, 1], got {quantile_q}"
        )));
    }
    let mut flips = Vec::new();
    let mut excluded = 0usize;
    for (i, clip) in calibration_clips.iter().enumerate() {
        let clean_pred = substitute.predict(&time_averaged_features(clip, mcfg)?);
        let pcfg = PoisonConfig {
            epsilon: f64::INFINITY,
            seed: derive_seed(pcfg_template.seed, i as u64),
            ..pcfg_template.clone()
        };
        let mut flip_distance = None;
        poison_with_observer(clip, &pcfg, mcfg, |_, value, features| {
            if substitute.predict(&features.column_means()) != clean_pred {
                flip_distance = Some(value.feature_distance);
                true
            } else {
                false
            }
        })?;
        match flip_distance {
            Some(d) => flips.push(d),
            None => excluded += 1,
        }
    }
    if flips.is_empty() {
        return Err(Error::CalibrationFailed {
            n_clips: calibration_clips.len(),
        });
    }
    flips.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Calibration {
        epsilon: quantile(&flips, quantile_q),
        n_flipped: flips.len(),
        n_excluded: excluded,
        flip_distances: flips,
    })
}
