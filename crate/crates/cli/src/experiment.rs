//! Experiment assembly: data preparation, per-cell seeding, poisoned
//! training, evaluation, and detection.

use rand::seq::SliceRandom;

use qsentry_core::attacks::{
    self, build_qtrojan, poison_dataset, poison_sample, select_blend_pattern, PoisonPlan,
    TriggerKind, TriggerSpec,
};
use qsentry_core::data::{self, LabeledSample};
use qsentry_core::detector::{detect, detect_raw_baseline, DetectionReport};
use qsentry_core::error::{Error, Result};
use qsentry_core::metrics::{attack_success_rate, clean_accuracy};
use qsentry_core::model::{predict, train, CircuitSpec, EpochStats, ModelParams};
use qsentry_core::rng::{derive_seed, rng_from_seed};

use crate::config::{AttackKind, DatasetConfig, ExperimentConfig};

/// Preprocessed pools drawn for one repeat: the training set and the
/// per-class test pools.
pub struct DataPools {
    pub train: Vec<LabeledSample>,
    pub test_source: Vec<LabeledSample>,
    pub test_target: Vec<LabeledSample>,
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub attack: AttackKind,
    pub rate: f64,
    pub repeat: u64,
}

impl CellSpec {
    fn seed_path(&self) -> [u64; 3] {
        [self.attack.id(), (self.rate * 1000.0).round() as u64, self.repeat]
    }

    pub fn label(&self) -> String {
        if matches!(self.attack, AttackKind::None) {
            "clean".to_string()
        } else {
            format!("{}_{}pct", self.attack.label(), (self.rate * 100.0).round() as u64)
        }
    }
}

/// Everything a finished cell reports.
pub struct CellOutcome {
    pub cell: CellSpec,
    pub ca: f64,
    pub asr: Option<f64>,
    pub report: DetectionReport,
    pub raw_report: DetectionReport,
    pub history: Vec<EpochStats>,
    pub spec: CircuitSpec,
    pub params: ModelParams,
    /// Ground-truth poison count of the detection test set.
    pub actual_poisons: usize,
    /// Per-category composition (source, target, backdoor) of the test set.
    pub actual_composition: (usize, usize, usize),
    pub test_set: Vec<LabeledSample>,
}

/// Load (or synthesize), filter to the two digits, preprocess, and draw the
/// training subset and per-class test pools for one repeat.
pub fn prepare_data(config: &ExperimentConfig, data_seed: u64) -> Result<DataPools> {
    let keep = (config.task.source_digit, config.task.target_digit);
    let (train_images, train_labels, test_images, test_labels) = match &config.dataset {
        DatasetConfig::Synthetic {
            n_train_pool,
            n_test_pool,
        } => {
            // Round-trip through IDX bytes so both sources share a path.
            let (train_set, train_labels) = data::synthetic::generate(*n_train_pool, data_seed);
            let (test_set, test_labels) =
                data::synthetic::generate(*n_test_pool, data_seed.wrapping_add(1));
            let train_bytes = data::write_idx_images(&train_set);
            let test_bytes = data::write_idx_images(&test_set);
            let train_set = match data::parse_idx(&train_bytes)? {
                data::IdxData::Images(s) => s,
                _ => unreachable!(),
            };
            let test_set = match data::parse_idx(&test_bytes)? {
                data::IdxData::Images(s) => s,
                _ => unreachable!(),
            };
            (train_set, train_labels, test_set, test_labels)
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let imgs = match data::parse_idx(&data::load_idx_bytes(train_images)?)? {
                data::IdxData::Images(s) => s,
                _ => return Err(Error::Format("train image file holds labels".into())),
            };
            let lbls = match data::parse_idx(&data::load_idx_bytes(train_labels)?)? {
                data::IdxData::Labels(l) => l,
                _ => return Err(Error::Format("train label file holds images".into())),
            };
            let timgs = match data::parse_idx(&data::load_idx_bytes(test_images)?)? {
                data::IdxData::Images(s) => s,
                _ => return Err(Error::Format("test image file holds labels".into())),
            };
            let tlbls = match data::parse_idx(&data::load_idx_bytes(test_labels)?)? {
                data::IdxData::Labels(l) => l,
                _ => return Err(Error::Format("test label file holds images".into())),
            };
            (imgs, lbls, timgs, tlbls)
        }
    };

    let train_filtered = data::filter_binary(&train_images, &train_labels, keep)?;
    let test_filtered = data::filter_binary(&test_images, &test_labels, keep)?;
    let train_all = data::to_samples(&train_filtered, config.task.crop)?;
    let test_all = data::to_samples(&test_filtered, config.task.crop)?;

    // Seeded draw of the training subset.
    let mut order: Vec<usize> = (0..train_all.len()).collect();
    let mut rng = rng_from_seed(derive_seed(data_seed, &[2]));
    order.shuffle(&mut rng);
    if order.len() < config.task.train_size {
        return Err(Error::Domain(format!(
            "train pool has {} samples, need {}",
            order.len(),
            config.task.train_size
        )));
    }
    let train = order[..config.task.train_size]
        .iter()
        .map(|&i| train_all[i].clone())
        .collect();

    // Seeded per-class test pools.
    let mut source: Vec<LabeledSample> = test_all
        .iter()
        .filter(|s| s.true_label == 0)
        .cloned()
        .collect();
    let mut target: Vec<LabeledSample> = test_all
        .iter()
        .filter(|s| s.true_label == 1)
        .cloned()
        .collect();
    if source.len() < config.task.test_source || target.len() < config.task.test_target {
        return Err(Error::Domain(format!(
            "test pool has {}/{} per class, need {}/{}",
            source.len(),
            target.len(),
            config.task.test_source,
            config.task.test_target
        )));
    }
    let mut rng = rng_from_seed(derive_seed(data_seed, &[3]));
    source.shuffle(&mut rng);
    target.shuffle(&mut rng);
    source.truncate(config.task.test_source);
    target.truncate(config.task.test_target);

    Ok(DataPools {
        train,
        test_source: source,
        test_target: target,
    })
}

/// The fixed-total detection test set: all target-class samples stay clean,
/// and round(rate × test_source) of the source-class samples are replaced by
/// their triggered versions (flagged, relabeled).
pub fn build_detection_test_set(
    pools: &DataPools,
    trigger: Option<&TriggerSpec>,
    rate: f64,
    blend_pattern: Option<&[f64]>,
    seed: u64,
) -> Result<(Vec<LabeledSample>, (usize, usize, usize))> {
    let mut set: Vec<LabeledSample> = pools
        .test_source
        .iter()
        .chain(pools.test_target.iter())
        .cloned()
        .collect();
    let n_source = pools.test_source.len();
    let mut poisons = 0;
    if let Some(trigger) = trigger {
        poisons = (rate * n_source as f64).round() as usize;
        let mut candidates: Vec<usize> = (0..n_source).collect();
        let mut rng = rng_from_seed(seed);
        candidates.shuffle(&mut rng);
        for &i in candidates.iter().take(poisons) {
            poison_sample(&mut set[i], trigger, blend_pattern)?;
        }
    }
    Ok((set, (n_source - poisons, pools.test_target.len(), poisons)))
}

/// Apply the trigger to every source-class test sample (for ASR scoring).
fn triggered_source_set(
    pools: &DataPools,
    trigger: &TriggerSpec,
    blend_pattern: Option<&[f64]>,
) -> Result<Vec<LabeledSample>> {
    let mut out = pools.test_source.clone();
    for sample in &mut out {
        poison_sample(sample, trigger, blend_pattern)?;
    }
    Ok(out)
}

/// Train, evaluate, and detect for one grid cell.
pub fn run_cell(config: &ExperimentConfig, cell: &CellSpec) -> Result<CellOutcome> {
    let path = cell.seed_path();
    let data_seed = derive_seed(config.seeds.data, &[cell.repeat]);
    let init_seed = derive_seed(config.seeds.init, &path);
    let attack_seed = derive_seed(config.seeds.attack, &path);
    let detector_seed = derive_seed(config.seeds.detector, &path);

    let pools = prepare_data(config, data_seed)?;
    let base_spec = config.circuit.to_spec();

    let mut attack_config = config.attack.clone();
    attack_config.kind = cell.attack;
    let trigger = attack_config.trigger_spec();

    // Attack setup: pattern exemplar, poisoned training set, trojan spec.
    let mut blend_pattern: Option<Vec<f64>> = None;
    let (train_set, model_spec) = match &trigger {
        None => (pools.train.clone(), base_spec.clone()),
        Some(trigger) => {
            let plan = PoisonPlan {
                rate: cell.rate,
                trigger: trigger.clone(),
                source_class: 0,
                target_class: 1,
                seed: attack_seed,
            };
            if matches!(trigger.kind, TriggerKind::Blend { .. }) {
                blend_pattern = Some(select_blend_pattern(&pools.train, &plan)?);
            }
            let poisoned = poison_dataset(&pools.train, &plan, blend_pattern.as_deref())?;
            let spec = if matches!(trigger.kind, TriggerKind::QTrojanCircuit) {
                let mut rng = rng_from_seed(attack_seed ^ 0x7a77);
                let sources: Vec<&LabeledSample> =
                    pools.train.iter().filter(|s| s.true_label == 0).collect();
                let targets: Vec<&LabeledSample> =
                    pools.train.iter().filter(|s| s.true_label == 1).collect();
                if sources.is_empty() || targets.is_empty() {
                    return Err(Error::Domain("need both classes for the trojan exemplars".into()));
                }
                let reference = sources[rand::Rng::gen_range(&mut rng, 0..sources.len())];
                let exemplar = targets[rand::Rng::gen_range(&mut rng, 0..targets.len())];
                build_qtrojan(&base_spec, reference, exemplar)?
            } else {
                base_spec.clone()
            };
            (poisoned, spec)
        }
    };

    let train_config = config.train.to_train_config(init_seed);
    let outcome = train(&model_spec, &train_set, &train_config)?;

    // Clean accuracy on the untriggered test composition.
    let clean_set: Vec<LabeledSample> = pools
        .test_source
        .iter()
        .chain(pools.test_target.iter())
        .cloned()
        .collect();
    let predictions: Vec<u8> = clean_set
        .iter()
        .map(|s| predict(&outcome.spec, &outcome.params, &s.features, false))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = clean_set.iter().map(|s| s.true_label).collect();
    let ca = clean_accuracy(&predictions, &labels)?;

    // Attack success rate on fully triggered source-class samples.
    let asr = match &trigger {
        None => None,
        Some(trigger) => {
            let triggered = triggered_source_set(&pools, trigger, blend_pattern.as_deref())?;
            let predictions: Vec<u8> = triggered
                .iter()
                .map(|s| predict(&outcome.spec, &outcome.params, &s.features, s.is_poisoned))
                .collect::<Result<_>>()?;
            Some(attack_success_rate(&predictions, 1)?)
        }
    };

    // Detection on the fixed-total composition.
    let (test_set, composition) = build_detection_test_set(
        &pools,
        trigger.as_ref(),
        cell.rate,
        blend_pattern.as_deref(),
        attack_seed ^ 0x5e7,
    )?;
    let options = config.detector.to_options(detector_seed);
    let report = detect(&outcome.spec, &outcome.params, &test_set, &options)?;
    let raw_report = detect_raw_baseline(&test_set, &options)?;

    Ok(CellOutcome {
        cell: *cell,
        ca,
        asr,
        report,
        raw_report,
        history: outcome.history,
        spec: outcome.spec,
        params: outcome.params,
        actual_poisons: composition.2,
        actual_composition: composition,
        test_set,
    })
}

/// The evaluation grid: the clean baseline plus 4 attacks × 3 rates.
pub fn grid_cells(repeats: u64) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for repeat in 0..repeats {
        cells.push(CellSpec {
            attack: AttackKind::None,
            rate: 0.0,
            repeat,
        });
        for attack in [
            AttackKind::Patch,
            AttackKind::Blend,
            AttackKind::Sinusoidal,
            AttackKind::Qtrojan,
        ] {
            for rate in [0.01, 0.05, 0.10] {
                cells.push(CellSpec {
                    attack,
                    rate,
                    repeat,
                });
            }
        }
    }
    cells
}

/// Re-apply a cell's attack to a fresh model loaded from disk is not needed;
/// detection alone re-derives the test set from the config and seeds.
pub fn detection_only(
    config: &ExperimentConfig,
    cell: &CellSpec,
    spec: &CircuitSpec,
    params: &ModelParams,
) -> Result<(Vec<LabeledSample>, DetectionReport, DetectionReport)> {
    let path = cell.seed_path();
    let data_seed = derive_seed(config.seeds.data, &[cell.repeat]);
    let attack_seed = derive_seed(config.seeds.attack, &path);
    let detector_seed = derive_seed(config.seeds.detector, &path);

    let pools = prepare_data(config, data_seed)?;
    let mut attack_config = config.attack.clone();
    attack_config.kind = cell.attack;
    let trigger = attack_config.trigger_spec();
    let blend_pattern = match &trigger {
        Some(t) if matches!(t.kind, TriggerKind::Blend { .. }) => {
            let plan = PoisonPlan {
                rate: cell.rate,
                trigger: t.clone(),
                source_class: 0,
                target_class: 1,
                seed: attack_seed,
            };
            Some(attacks::select_blend_pattern(&pools.train, &plan)?)
        }
        _ => None,
    };
    let (test_set, _) = build_detection_test_set(
        &pools,
        trigger.as_ref(),
        cell.rate,
        blend_pattern.as_deref(),
        attack_seed ^ 0x5e7,
    )?;
    let options = config.detector.to_options(detector_seed);
    let report = detect(spec, params, &test_set, &options)?;
    let raw_report = detect_raw_baseline(&test_set, &options)?;
    Ok((test_set, report, raw_report))
}
