//! Backdoor trigger generators and poisoning orchestration.
//!
//! Three data-level triggers operate on the 16×16 preprocessed features
//! (patch, blend, sinusoidal overlay); the circuit-level trojan leaves the
//! data untouched and instead installs a fixed RY layer in the model spec.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, CROP_SIDE, FEATURE_LEN};
use crate::error::{Error, Result};
use crate::model::{build_qtrojan_angle, CircuitSpec};
use crate::rng::rng_from_seed;
use crate::statevector::amplitude_encode;

/// Trigger family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerKind {
    /// An s×s block of fixed intensity at a fixed location.
    Patch {
        size: usize,
        intensity: f64,
        /// (row, col) of the block's upper-left corner in the 16×16 crop.
        location: (usize, usize),
    },
    /// Convex mix with a Gaussian-blurred target-class exemplar.
    Blend { sigma: f64, mix: f64 },
    /// Additive Gaussian-filtered sinusoidal overlay.
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        filter_sigma: f64,
    },
    /// Circuit-level trojan; the input data is untouched.
    QTrojanCircuit,
}

impl TriggerKind {
    pub fn patch_default() -> Self {
        TriggerKind::Patch {
            size: 3,
            intensity: 1.0,
            location: (0, 0),
        }
    }

    pub fn blend_default() -> Self {
        TriggerKind::Blend {
            sigma: 1.5,
            mix: 0.3,
        }
    }

    pub fn sinusoidal_default() -> Self {
        TriggerKind::Sinusoidal {
            amplitude: 0.2,
            frequency: 1.0,
            filter_sigma: 1.0,
        }
    }
}

/// A trigger bound to its target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    #[serde(flatten)]
    pub kind: TriggerKind,
    pub target_class: u8,
}

/// Which samples get poisoned, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    /// Fraction of the set to poison.
    pub rate: f64,
    pub trigger: TriggerSpec,
    pub source_class: u8,
    pub target_class: u8,
    pub seed: u64,
}

impl PoisonPlan {
    pub fn validate(&self) -> Result<()> {
        if self.source_class == self.target_class {
            return Err(Error::Config("source and target class must differ".into()));
        }
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("poison rate {} not in [0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// Truncated, normalized 1-D Gaussian kernel of radius ceil(3σ).
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    kernel
}

/// Separable zero-padded Gaussian blur on a 16×16 image. The truncated 2-D
/// kernel factors exactly, so this matches a direct 2-D convolution with the
/// globally normalized kernel.
pub fn gaussian_blur(image: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if image.len() != FEATURE_LEN {
        return Err(Error::Shape(format!(
            "expected {FEATURE_LEN} pixels, got {}",
            image.len()
        )));
    }
    if sigma <= 0.0 {
        return Ok(image.to_vec());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let side = CROP_SIDE as isize;
    let mut rows_done = vec![0.0; FEATURE_LEN];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let cc = c + k as isize - radius;
                if (0..side).contains(&cc) {
                    acc += w * image[(r * side + cc) as usize];
                }
            }
            rows_done[(r * side + c) as usize] = acc;
        }
    }
    let mut out = vec![0.0; FEATURE_LEN];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let rr = r + k as isize - radius;
                if (0..side).contains(&rr) {
                    acc += w * rows_done[(rr * side + c) as usize];
                }
            }
            out[(r * side + c) as usize] = acc;
        }
    }
    Ok(out)
}

/// Set an s×s block to the configured intensity; idempotent.
pub fn apply_patch_trigger(
    features: &[f64],
    size: usize,
    intensity: f64,
    location: (usize, usize),
) -> Result<Vec<f64>> {
    if features.len() != FEATURE_LEN {
        return Err(Error::Shape(format!(
            "expected {FEATURE_LEN} features, got {}",
            features.len()
        )));
    }
    if size < 1 || location.0 + size > CROP_SIDE || location.1 + size > CROP_SIDE {
        return Err(Error::Config(format!(
            "{size}x{size} patch at {location:?} exceeds the {CROP_SIDE}x{CROP_SIDE} image"
        )));
    }
    let mut out = features.to_vec();
    let value = intensity.clamp(0.0, 1.0);
    for r in location.0..location.0 + size {
        for c in location.1..location.1 + size {
            out[r * CROP_SIDE + c] = value;
        }
    }
    Ok(out)
}

/// out = clamp((1-mix)·x + mix·blur(pattern, sigma)).
pub fn apply_blend_trigger(
    features: &[f64],
    sigma: f64,
    mix: f64,
    pattern: &[f64],
) -> Result<Vec<f64>> {
    if features.len() != FEATURE_LEN || pattern.len() != FEATURE_LEN {
        return Err(Error::Shape("blend inputs must be 16x16 feature vectors".into()));
    }
    let blurred = gaussian_blur(pattern, sigma)?;
    Ok(features
        .iter()
        .zip(&blurred)
        .map(|(x, p)| ((1.0 - mix) * x + mix * p).clamp(0.0, 1.0))
        .collect())
}

/// The raw vertical sinusoid: pattern(r, c) = sin(2π·f·c / 16).
pub fn sinusoidal_pattern(frequency: f64) -> Vec<f64> {
    let mut pattern = vec![0.0; FEATURE_LEN];
    for r in 0..CROP_SIDE {
        for c in 0..CROP_SIDE {
            pattern[r * CROP_SIDE + c] =
                (2.0 * std::f64::consts::PI * frequency * c as f64 / CROP_SIDE as f64).sin();
        }
    }
    pattern
}

/// out = clamp(x + amplitude·blur(sin pattern, filter_sigma)).
pub fn apply_sinusoidal_trigger(
    features: &[f64],
    amplitude: f64,
    frequency: f64,
    filter_sigma: f64,
) -> Result<Vec<f64>> {
    if features.len() != FEATURE_LEN {
        return Err(Error::Shape(format!(
            "expected {FEATURE_LEN} features, got {}",
            features.len()
        )));
    }
    let filtered = gaussian_blur(&sinusoidal_pattern(frequency), filter_sigma)?;
    Ok(features
        .iter()
        .zip(&filtered)
        .map(|(x, p)| (x + amplitude * p).clamp(0.0, 1.0))
        .collect())
}

/// Apply a data-level trigger to one feature vector. The circuit-level
/// trojan returns the features untouched. Blend requires the fixed pattern
/// exemplar.
pub fn apply_trigger(
    features: &[f64],
    trigger: &TriggerSpec,
    blend_pattern: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match &trigger.kind {
        TriggerKind::Patch {
            size,
            intensity,
            location,
        } => apply_patch_trigger(features, *size, *intensity, *location),
        TriggerKind::Blend { sigma, mix } => {
            let pattern = blend_pattern.ok_or_else(|| {
                Error::Config("blend trigger needs a pattern exemplar".into())
            })?;
            apply_blend_trigger(features, *sigma, *mix, pattern)
        }
        TriggerKind::Sinusoidal {
            amplitude,
            frequency,
            filter_sigma,
        } => apply_sinusoidal_trigger(features, *amplitude, *frequency, *filter_sigma),
        TriggerKind::QTrojanCircuit => Ok(features.to_vec()),
    }
}

/// Install the trojan layer on a circuit spec: one RY(θ_q) per qubit, each
/// initialized from the overlap between the encoded reference input (a
/// source-class exemplar; the layer is identity before training, so the
/// triggered input equals the input) and the encoded target exemplar. The
/// angles are fine-tuned afterwards by poisoned training.
pub fn build_qtrojan(
    spec_model: &CircuitSpec,
    reference: &LabeledSample,
    exemplar: &LabeledSample,
) -> Result<CircuitSpec> {
    let psi0 = amplitude_encode(&reference.features)?;
    let psi1 = amplitude_encode(&exemplar.features)?;
    let theta = build_qtrojan_angle(&psi0, &psi1)?;
    let mut out = spec_model.clone();
    out.trojan_layer = Some(vec![theta; spec_model.num_qubits]);
    Ok(out)
}

/// Mark one sample as poisoned: trigger applied (data-level), label moved to
/// the target class, flag set.
pub fn poison_sample(
    sample: &mut LabeledSample,
    trigger: &TriggerSpec,
    blend_pattern: Option<&[f64]>,
) -> Result<()> {
    sample.features = apply_trigger(&sample.features, trigger, blend_pattern)?;
    sample.train_label = trigger.target_class;
    sample.is_poisoned = true;
    Ok(())
}

/// Pick the fixed blend pattern exemplar: a seeded choice among the
/// target-class samples.
pub fn select_blend_pattern(samples: &[LabeledSample], plan: &PoisonPlan) -> Result<Vec<f64>> {
    let candidates: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.true_label == plan.target_class && !s.is_poisoned)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Config("no target-class exemplar for the blend pattern".into()));
    }
    let mut rng = rng_from_seed(plan.seed.wrapping_add(0x1bd));
    let pick = rand::Rng::gen_range(&mut rng, 0..candidates.len());
    Ok(candidates[pick].features.clone())
}

/// Poison a training set: round(rate·|D|) seeded-random source-class samples
/// get the trigger, the target label, and the poison flag. The clean
/// complement is untouched bit for bit.
pub fn poison_dataset(
    train_set: &[LabeledSample],
    plan: &PoisonPlan,
    blend_pattern: Option<&[f64]>,
) -> Result<Vec<LabeledSample>> {
    plan.validate()?;
    let mut out = train_set.to_vec();
    let count = (plan.rate * train_set.len() as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    let mut candidates: Vec<usize> = out
        .iter()
        .enumerate()
        .filter(|(_, s)| s.true_label == plan.source_class && !s.is_poisoned)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < count {
        return Err(Error::Domain(format!(
            "need {count} source-class samples to poison, only {} available",
            candidates.len()
        )));
    }
    let mut rng = rng_from_seed(plan.seed);
    candidates.shuffle(&mut rng);
    for &i in candidates.iter().take(count) {
        poison_sample(&mut out[i], &plan.trigger, blend_pattern)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_features() -> Vec<f64> {
        vec![0.0; FEATURE_LEN]
    }

    fn sample_with(features: Vec<f64>, class: u8, idx: usize) -> LabeledSample {
        LabeledSample {
            features,
            true_label: class,
            train_label: class,
            is_poisoned: false,
            source_index: idx,
        }
    }

    #[test]
    fn patch_hits_exactly_the_expected_indices() {
        let out = apply_patch_trigger(&zero_features(), 3, 1.0, (0, 0)).unwrap();
        let on: Vec<usize> = out
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(on, vec![0, 1, 2, 16, 17, 18, 32, 33, 34]);
    }

    #[test]
    fn patch_is_idempotent() {
        let mut base = zero_features();
        base[100] = 0.4;
        let once = apply_patch_trigger(&base, 3, 1.0, (0, 0)).unwrap();
        let twice = apply_patch_trigger(&once, 3, 1.0, (0, 0)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn full_size_patch_makes_a_constant_image() {
        let mut base = zero_features();
        base[5] = 0.9;
        let out = apply_patch_trigger(&base, 16, 0.7, (0, 0)).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn out_of_bounds_patch_is_config_error() {
        assert!(matches!(
            apply_patch_trigger(&zero_features(), 3, 1.0, (14, 14)),
            Err(Error::Config(_))
        ));
    }

    /// Direct (non-separable) 2-D convolution with the truncated normalized
    /// Gaussian kernel, zero padding. Independent of the production path.
    fn blur_oracle(image: &[f64], sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil() as isize;
        let side = CROP_SIDE as isize;
        let mut kernel = Vec::new();
        let mut sum = 0.0;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let w = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                kernel.push((dr, dc, w));
                sum += w;
            }
        }
        let mut out = vec![0.0; FEATURE_LEN];
        for r in 0..side {
            for c in 0..side {
                let mut acc = 0.0;
                for &(dr, dc, w) in &kernel {
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..side).contains(&rr) && (0..side).contains(&cc) {
                        acc += w * image[(rr * side + cc) as usize];
                    }
                }
                out[(r * side + c) as usize] = acc / sum;
            }
        }
        out
    }

    #[test]
    fn separable_blur_matches_direct_convolution() {
        let mut rng = crate::rng::rng_from_seed(2);
        let image: Vec<f64> = (0..FEATURE_LEN)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();
        for &sigma in &[1.0, 1.5] {
            let fast = gaussian_blur(&image, sigma).unwrap();
            let slow = blur_oracle(&image, sigma);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blend_limits_and_oracle() {
        let mut rng = crate::rng::rng_from_seed(3);
        let x: Vec<f64> = (0..FEATURE_LEN)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();
        let pattern: Vec<f64> = (0..FEATURE_LEN)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();

        let zero_mix = apply_blend_trigger(&x, 1.5, 0.0, &pattern).unwrap();
        for (a, b) in zero_mix.iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }

        let full_mix = apply_blend_trigger(&x, 1.5, 1.0, &pattern).unwrap();
        let blurred = blur_oracle(&pattern, 1.5);
        for (a, b) in full_mix.iter().zip(&blurred) {
            assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-12);
        }

        // x used as its own pattern: out = 0.7 x + 0.3 blur(x).
        let self_mix = apply_blend_trigger(&x, 1.5, 0.3, &x).unwrap();
        let oracle = blur_oracle(&x, 1.5);
        for ((out, xi), bi) in self_mix.iter().zip(&x).zip(&oracle) {
            assert!((out - (0.7 * xi + 0.3 * bi).clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoidal_zero_amplitude_is_identity() {
        let mut base = zero_features();
        base[40] = 0.3;
        let out = apply_sinusoidal_trigger(&base, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn sinusoidal_additive_term_matches_oracle() {
        let base = zero_features();
        let out = apply_sinusoidal_trigger(&base, 0.2, 1.0, 1.0).unwrap();
        let filtered = blur_oracle(&sinusoidal_pattern(1.0), 1.0);
        for (o, f) in out.iter().zip(&filtered) {
            assert!((o - (0.2 * f).clamp(0.0, 1.0)).abs() < 1e-12);
        }
        // Column 0 of the raw sine is sin(0) = 0; the filtered value at
        // column 0 picks up mass from neighbors, all scaled by 0.2.
        assert!((out[0] - (0.2 * filtered[0]).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn qtrojan_layer_initialization_from_overlaps() {
        let spec = CircuitSpec {
            num_qubits: 2,
            num_layers: 1,
            trojan_layer: None,
        };
        let a = sample_with(vec![1.0, 0.0, 0.0, 0.0], 0, 0);
        let b = sample_with(vec![0.0, 1.0, 0.0, 0.0], 1, 1);
        let same = build_qtrojan(&spec, &a, &a).unwrap();
        assert_eq!(same.trojan_layer, Some(vec![0.0, 0.0]));
        let orthogonal = build_qtrojan(&spec, &a, &b).unwrap();
        for angle in orthogonal.trojan_layer.unwrap() {
            assert!((angle - std::f64::consts::PI).abs() < 1e-12);
        }
    }

    fn toy_set(n_source: usize, n_target: usize) -> Vec<LabeledSample> {
        let mut set = Vec::new();
        for i in 0..n_source {
            let mut f = zero_features();
            f[i % FEATURE_LEN] = 0.5;
            set.push(sample_with(f, 0, i));
        }
        for i in 0..n_target {
            let mut f = zero_features();
            f[(i + 7) % FEATURE_LEN] = 0.8;
            set.push(sample_with(f, 1, n_source + i));
        }
        set
    }

    fn patch_plan(rate: f64) -> PoisonPlan {
        PoisonPlan {
            rate,
            trigger: TriggerSpec {
                kind: TriggerKind::patch_default(),
                target_class: 1,
            },
            source_class: 0,
            target_class: 1,
            seed: 5,
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let set = toy_set(10, 10);
        let out = poison_dataset(&set, &patch_plan(0.0), None).unwrap();
        assert_eq!(out, set);
    }

    #[test]
    fn poison_count_is_exact() {
        let set = toy_set(3000, 2000);
        let out = poison_dataset(&set, &patch_plan(0.01), None).unwrap();
        assert_eq!(out.iter().filter(|s| s.is_poisoned).count(), 50);
        // Flags and labels are consistent; clean complement untouched.
        for (before, after) in set.iter().zip(&out) {
            if after.is_poisoned {
                assert_eq!(after.train_label, 1);
                assert_eq!(after.true_label, 0);
            } else {
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn insufficient_source_samples_is_domain_error() {
        let set = toy_set(2, 100);
        assert!(matches!(
            poison_dataset(&set, &patch_plan(0.5), None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn poisoning_is_deterministic_by_seed() {
        let set = toy_set(50, 50);
        let a = poison_dataset(&set, &patch_plan(0.1), None).unwrap();
        let b = poison_dataset(&set, &patch_plan(0.1), None).unwrap();
        assert_eq!(a, b);
        let mut other = patch_plan(0.1);
        other.seed = 6;
        let c = poison_dataset(&set, &other, None).unwrap();
        let flags = |s: &[LabeledSample]| {
            s.iter()
                .enumerate()
                .filter(|(_, x)| x.is_poisoned)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        assert_ne!(flags(&a), flags(&c));
    }

    proptest! {
        #[test]
        fn triggered_features_stay_in_unit_interval(seed in 0u64..50) {
            let mut rng = crate::rng::rng_from_seed(seed);
            let x: Vec<f64> = (0..FEATURE_LEN).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
            let pattern: Vec<f64> = (0..FEATURE_LEN).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
            for out in [
                apply_patch_trigger(&x, 3, 1.0, (0, 0)).unwrap(),
                apply_blend_trigger(&x, 1.5, 0.3, &pattern).unwrap(),
                apply_sinusoidal_trigger(&x, 0.2, 1.0, 1.0).unwrap(),
            ] {
                prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
