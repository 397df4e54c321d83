use std::time::Instant;

use qsentry_cli::config::{AttackKind, ExperimentConfig};
use qsentry_cli::experiment::{run_cell, CellSpec};
use qsentry_cli::tables::CellStats;
use qsentry_core::rng::SeedStreams;

fn main() {
    let mut config = ExperimentConfig::synthetic_default(SeedStreams::default());
    let args: Vec<String> = std::env::args().collect();
    // usage: calibrate [epochs] [attack] [rate]
    if args.len() > 1 {
        config.train.epochs = args[1].parse().unwrap();
    }
    let attack = if args.len() > 2 {
        match args[2].as_str() {
            "patch" => AttackKind::Patch,
            "blend" => AttackKind::Blend,
            "sin" => AttackKind::Sinusoidal,
            "qtrojan" => AttackKind::Qtrojan,
            _ => AttackKind::None,
        }
    } else {
        AttackKind::None
    };
    let rate: f64 = if args.len() > 3 { args[3].parse().unwrap() } else { 0.0 };
    if args.len() > 4 {
        config.train.learning_rate = args[4].parse().unwrap();
    }
    if args.len() > 5 {
        config.seeds.init = args[5].parse().unwrap();
    }
    if args.len() > 6 {
        config.train.batch_size = args[6].parse().unwrap();
    }
    if args.len() > 7 && args[7] == "sgd" {
        config.train.optimizer = qsentry_core::model::Optimizer::Sgd;
    }

    let cell = CellSpec { attack, rate, repeat: 0 };
    let start = Instant::now();
    let outcome = run_cell(&config, &cell).unwrap();
    let elapsed = start.elapsed();
    let stats = CellStats::from_outcome(&outcome);
    println!("cell {} took {:.1}s", cell.label(), elapsed.as_secs_f64());
    println!("CA = {:.4}  ASR = {:?}", outcome.ca, outcome.asr);
    println!(
        "loss history: {:?}",
        outcome.history.iter().map(|h| (h.mean_loss * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    println!(
        "holdout: {:?}",
        outcome.history.iter().map(|h| h.holdout_accuracy).collect::<Vec<_>>()
    );
    println!(
        "measurement pipeline: DA={:?} F1={:?} SC={:.3} RCS={:.4} K={} flagged={} sizes={:?} inconclusive={}",
        outcome.report.detection_accuracy,
        outcome.report.f1,
        outcome.report.sc,
        outcome.report.rcs,
        outcome.report.chosen_k,
        outcome.report.flagged_indices.len(),
        outcome.report.cluster_sizes,
        outcome.report.inconclusive,
    );
    println!(
        "raw pipeline:         DA={:?} F1={:?} SC={:.3} K={} flagged={} sizes={:?}",
        outcome.raw_report.detection_accuracy,
        outcome.raw_report.f1,
        outcome.raw_report.sc,
        outcome.raw_report.chosen_k,
        outcome.raw_report.flagged_indices.len(),
        outcome.raw_report.cluster_sizes,
    );
    println!(
        "cluster silhouettes: {:?} (flagged={:.3}, min clean={:.3})",
        outcome.report.cluster_mean_silhouette, stats.flagged_silhouette, stats.min_clean_silhouette
    );
    println!("pred counts {:?} actual {:?}", stats.pred_counts, stats.actual_counts);
}
