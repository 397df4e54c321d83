//! Experiment configuration: one JSON document drives data, model, attack,
//! detector, and seeding. Seeds are explicit — nothing falls back to the
//! clock — and every artifact file embeds the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qsentry_core::attacks::{TriggerKind, TriggerSpec};
use qsentry_core::data::CropPolicy;
use qsentry_core::detector::{DetectOptions, TransformKind};
use qsentry_core::error::{Error, Result};
use qsentry_core::model::{CircuitSpec, GradientMethod, Optimizer, TrainConfig};
use qsentry_core::rng::SeedStreams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Procedurally rendered 1/7 corpus (pool sizes are pre-filter counts).
    Synthetic {
        #[serde(default = "default_train_pool")]
        n_train_pool: usize,
        #[serde(default = "default_test_pool")]
        n_test_pool: usize,
    },
    /// Standard IDX files, optionally gzipped.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_train_pool() -> usize {
    4400
}

fn default_test_pool() -> usize {
    2400
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            n_train_pool: default_train_pool(),
            n_test_pool: default_test_pool(),
        }
    }
}

/// The binary task and evaluation-set sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub source_digit: u8,
    pub target_digit: u8,
    /// Training set size drawn from the filtered pool.
    pub train_size: usize,
    /// Source-class and target-class counts of the 1000-sample test set.
    pub test_source: usize,
    pub test_target: usize,
    #[serde(default)]
    pub crop: CropPolicy,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            source_digit: 1,
            target_digit: 7,
            train_size: 2000,
            test_source: 500,
            test_target: 500,
            crop: CropPolicy::CenterCrop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Patch,
    Blend,
    Sinusoidal,
    Qtrojan,
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::None => "clean",
            AttackKind::Patch => "patch",
            AttackKind::Blend => "blend",
            AttackKind::Sinusoidal => "sinusoidal",
            AttackKind::Qtrojan => "qtrojan",
        }
    }

    pub fn table_name(&self) -> &'static str {
        match self {
            AttackKind::None => "Clean",
            AttackKind::Patch => "Patch Trigger",
            AttackKind::Blend => "Blend Trigger",
            AttackKind::Sinusoidal => "Sinusoidal Trigger",
            AttackKind::Qtrojan => "QTrojan Circuit",
        }
    }

    pub fn id(&self) -> u64 {
        match self {
            AttackKind::None => 0,
            AttackKind::Patch => 1,
            AttackKind::Blend => 2,
            AttackKind::Sinusoidal => 3,
            AttackKind::Qtrojan => 4,
        }
    }
}

/// Attack selection plus per-kind parameters (spec defaults when omitted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_patch_intensity")]
    pub patch_intensity: f64,
    #[serde(default)]
    pub patch_location: (usize, usize),
    #[serde(default = "default_blend_sigma")]
    pub blend_sigma: f64,
    #[serde(default = "default_blend_mix")]
    pub blend_mix: f64,
    #[serde(default = "default_sin_amplitude")]
    pub sin_amplitude: f64,
    #[serde(default = "default_sin_frequency")]
    pub sin_frequency: f64,
    #[serde(default = "default_sin_filter_sigma")]
    pub sin_filter_sigma: f64,
}

fn default_patch_size() -> usize {
    3
}
fn default_patch_intensity() -> f64 {
    1.0
}
fn default_blend_sigma() -> f64 {
    1.5
}
fn default_blend_mix() -> f64 {
    0.3
}
fn default_sin_amplitude() -> f64 {
    0.2
}
fn default_sin_frequency() -> f64 {
    1.0
}
fn default_sin_filter_sigma() -> f64 {
    1.0
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            patch_size: default_patch_size(),
            patch_intensity: default_patch_intensity(),
            patch_location: (0, 0),
            blend_sigma: default_blend_sigma(),
            blend_mix: default_blend_mix(),
            sin_amplitude: default_sin_amplitude(),
            sin_frequency: default_sin_frequency(),
            sin_filter_sigma: default_sin_filter_sigma(),
        }
    }
}

impl AttackConfig {
    pub fn with_kind(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// The data-level trigger for this attack, bound to class 1 (the target
    /// digit's class index). `None` for the clean setting.
    pub fn trigger_spec(&self) -> Option<TriggerSpec> {
        let kind = match self.kind {
            AttackKind::None => return None,
            AttackKind::Patch => TriggerKind::Patch {
                size: self.patch_size,
                intensity: self.patch_intensity,
                location: self.patch_location,
            },
            AttackKind::Blend => TriggerKind::Blend {
                sigma: self.blend_sigma,
                mix: self.blend_mix,
            },
            AttackKind::Sinusoidal => TriggerKind::Sinusoidal {
                amplitude: self.sin_amplitude,
                frequency: self.sin_frequency,
                filter_sigma: self.sin_filter_sigma,
            },
            AttackKind::Qtrojan => TriggerKind::QTrojanCircuit,
        };
        Some(TriggerSpec {
            kind,
            target_class: 1,
        })
    }
}

/// Circuit shape (the trojan layer is attack state, not configuration).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub num_qubits: usize,
    pub num_layers: usize,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            num_qubits: 8,
            num_layers: 8,
        }
    }
}

impl CircuitConfig {
    pub fn to_spec(&self) -> CircuitSpec {
        CircuitSpec {
            num_qubits: self.num_qubits,
            num_layers: self.num_layers,
            trojan_layer: None,
        }
    }
}

/// Training hyperparameters (the seed comes from the seed streams).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub tv_lambda: f64,
    pub holdout_fraction: f64,
    pub freeze_base: bool,
    pub gradient: GradientMethod,
}

impl Default for TrainParams {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            learning_rate: base.learning_rate,
            epochs: base.epochs,
            batch_size: base.batch_size,
            optimizer: base.optimizer,
            tv_lambda: base.tv_lambda,
            holdout_fraction: base.holdout_fraction,
            freeze_base: base.freeze_base,
            gradient: base.gradient,
        }
    }
}

impl TrainParams {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
            tv_lambda: self.tv_lambda,
            holdout_fraction: self.holdout_fraction,
            freeze_base: self.freeze_base,
            gradient: self.gradient,
        }
    }
}

/// Detector knobs (the seed comes from the seed streams).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorParams {
    pub transform: TransformKind,
    pub d: usize,
    pub k_candidates: Vec<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub shots: Option<u64>,
    pub inconclusive_sc: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        let base = DetectOptions::default();
        Self {
            transform: base.transform,
            d: base.d,
            k_candidates: base.k_candidates,
            restarts: base.restarts,
            max_iter: base.max_iter,
            shots: base.shots,
            inconclusive_sc: base.inconclusive_sc,
        }
    }
}

impl DetectorParams {
    pub fn to_options(&self, seed: u64) -> DetectOptions {
        DetectOptions {
            transform: self.transform,
            d: self.d,
            k_candidates: self.k_candidates.clone(),
            restarts: self.restarts,
            max_iter: self.max_iter,
            seed,
            shots: self.shots,
            inconclusive_sc: self.inconclusive_sc,
        }
    }
}

/// The whole experiment, loadable from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub circuit: CircuitConfig,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub poison_rate: f64,
    #[serde(default)]
    pub detector: DetectorParams,
    pub seeds: SeedStreams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Minimal config with explicit seeds, used by tests and the examples.
    pub fn synthetic_default(seeds: SeedStreams) -> Self {
        Self {
            dataset: DatasetConfig::default(),
            task: TaskConfig::default(),
            circuit: CircuitConfig::default(),
            train: TrainParams::default(),
            attack: AttackConfig::default(),
            poison_rate: 0.0,
            detector: DetectorParams::default(),
            seeds,
            output_dir: default_output_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &self.dataset
        {
            for path in [train_images, train_labels, test_images, test_labels] {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "dataset file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.poison_rate) {
            return Err(Error::Config(format!(
                "poison rate {} not in [0, 1)",
                self.poison_rate
            )));
        }
        if self.task.source_digit == self.task.target_digit {
            return Err(Error::Config("source and target digit must differ".into()));
        }
        if self.task.train_size == 0 || self.task.test_source == 0 || self.task.test_target == 0 {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        if self.detector.d < 1 || self.detector.d > self.circuit.num_qubits {
            return Err(Error::Config(format!(
                "detector d = {} out of range for {} qubits",
                self.detector.d, self.circuit.num_qubits
            )));
        }
        self.train.to_train_config(0).validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization; embedded in every
    /// artifact for provenance.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Apply a `stream=value` seed override (from `--seed-override`).
    pub fn apply_seed_override(&mut self, spec: &str) -> Result<()> {
        let (stream, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("seed override '{spec}' is not stream=u64")))?;
        let value: u64 = value
            .parse()
            .map_err(|_| Error::Config(format!("seed override value '{value}' is not a u64")))?;
        match stream {
            "data" => self.seeds.data = value,
            "init" => self.seeds.init = value,
            "attack" => self.seeds.attack = value,
            "detector" => self.seeds.detector = value,
            other => {
                return Err(Error::Config(format!(
                    "unknown seed stream '{other}' (expected data/init/attack/detector)"
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::synthetic_default(SeedStreams::default());
        let b = ExperimentConfig::synthetic_default(SeedStreams::default());
        assert_eq!(a.hash(), b.hash());
        let mut c = ExperimentConfig::synthetic_default(SeedStreams::default());
        c.poison_rate = 0.05;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seed_overrides_parse() {
        let mut config = ExperimentConfig::synthetic_default(SeedStreams::default());
        config.apply_seed_override("data=99").unwrap();
        assert_eq!(config.seeds.data, 99);
        assert!(config.apply_seed_override("bogus=1").is_err());
        assert!(config.apply_seed_override("data").is_err());
        assert!(config.apply_seed_override("data=x").is_err());
    }

    #[test]
    fn config_without_seeds_is_rejected() {
        let json = r#"{ "poison_rate": 0.01 }"#;
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err(), "seeds must be explicit");
    }

    #[test]
    fn missing_idx_files_fail_validation() {
        let mut config = ExperimentConfig::synthetic_default(SeedStreams::default());
        config.dataset = DatasetConfig::Idx {
            train_images: "/nonexistent/a".into(),
            train_labels: "/nonexistent/b".into(),
            test_images: "/nonexistent/c".into(),
            test_labels: "/nonexistent/d".into(),
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn attack_trigger_specs_carry_defaults() {
        let attack = AttackConfig::with_kind(AttackKind::Patch);
        match attack.trigger_spec().unwrap().kind {
            TriggerKind::Patch {
                size,
                intensity,
                location,
            } => {
                assert_eq!(size, 3);
                assert_eq!(intensity, 1.0);
                assert_eq!(location, (0, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(AttackConfig::default().trigger_spec().is_none());
    }
}
