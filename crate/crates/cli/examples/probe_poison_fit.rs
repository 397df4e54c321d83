use qsentry_cli::config::{AttackKind, ExperimentConfig};
use qsentry_cli::experiment::{prepare_data, CellSpec};
use qsentry_core::attacks::{poison_dataset, PoisonPlan, TriggerKind, TriggerSpec};
use qsentry_core::model::{forward_with_trigger, train};
use qsentry_core::rng::{derive_seed, SeedStreams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(15);
    let init_seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(23);

    let mut config = ExperimentConfig::synthetic_default(SeedStreams::default());
    config.train.epochs = epochs;
    let cell = CellSpec { attack: AttackKind::Patch, rate: 0.10, repeat: 0 };
    let data_seed = derive_seed(config.seeds.data, &[0]);
    let pools = prepare_data(&config, data_seed).unwrap();
    let trigger = TriggerSpec { kind: TriggerKind::patch_default(), target_class: 1 };
    let plan = PoisonPlan { rate: cell.rate, trigger: trigger.clone(), source_class: 0, target_class: 1, seed: 42 };
    let poisoned = poison_dataset(&pools.train, &plan, None).unwrap();

    let spec = config.circuit.to_spec();
    let tc = config.train.to_train_config(init_seed);
    let out = train(&spec, &poisoned, &tc).unwrap();

    let gap = |features: &[f64]| {
        let (p0, p1) = forward_with_trigger(&out.spec, &out.params, features, false).unwrap();
        p1 - p0
    };
    let mut train_poison_gaps: Vec<f64> = poisoned.iter().filter(|s| s.is_poisoned).map(|s| gap(&s.features)).collect();
    let train_hits = train_poison_gaps.iter().filter(|&&g| g > 0.0).count();
    train_poison_gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let clean1_gaps: Vec<f64> = poisoned.iter().filter(|s| !s.is_poisoned && s.true_label == 0).take(200).map(|s| gap(&s.features)).collect();
    let clean7_gaps: Vec<f64> = poisoned.iter().filter(|s| !s.is_poisoned && s.true_label == 1).take(200).map(|s| gap(&s.features)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("train poison: {}/{} flipped, gap mean {:+.3} min {:+.3} max {:+.3}",
        train_hits, train_poison_gaps.len(), mean(&train_poison_gaps),
        train_poison_gaps.first().unwrap(), train_poison_gaps.last().unwrap());
    println!("clean 1 gap mean {:+.3} (want negative), clean 7 gap mean {:+.3} (want positive)",
        mean(&clean1_gaps), mean(&clean7_gaps));
}
