use qsentry_cli::config::{AttackKind, ExperimentConfig};
use qsentry_cli::experiment::{run_cell, CellSpec};
use qsentry_core::detector::{collect_measurements, transform_features, MeasurementOptions, TransformKind};
use qsentry_core::rng::SeedStreams;

fn group_stats(label: &str, rows: Vec<Vec<f64>>) {
    let q = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..q).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..q)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let fmt = |v: &Vec<f64>| v.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(" ");
    println!("{label:<16} n={:<4} mean [{}]", rows.len(), fmt(&mean));
    println!("{:<16} {:<6} std  [{}]", "", "", fmt(&std));
}

fn main() {
    let mut config = ExperimentConfig::synthetic_default(SeedStreams::default());
    config.train.epochs = 15;
    let cell = CellSpec { attack: AttackKind::Patch, rate: 0.10, repeat: 0 };
    let outcome = run_cell(&config, &cell).unwrap();
    let m = collect_measurements(&outcome.spec, &outcome.params, &outcome.test_set, &MeasurementOptions::default()).unwrap();

    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut backdoor = Vec::new();
    for (i, s) in outcome.test_set.iter().enumerate() {
        let row: Vec<f64> = m.values.row(i).to_vec();
        if s.is_poisoned { backdoor.push(row); }
        else if s.true_label == 0 { source.push(row); }
        else { target.push(row); }
    }
    group_stats("source-clean", source);
    group_stats("target-clean", target);
    group_stats("backdoor", backdoor);

    // 2-D ICA coordinates per group: how far is the backdoor centroid from
    // the clean centroids, in units of clean spread?
    let feats = transform_features(&m.values, TransformKind::Ica, 2, 1).unwrap();
    let mut groups: [(f64, f64, f64, usize); 3] = [(0.0, 0.0, 0.0, 0); 3];
    for (i, s) in outcome.test_set.iter().enumerate() {
        let g = if s.is_poisoned { 2 } else { s.true_label as usize };
        groups[g].0 += feats.values[[i, 0]];
        groups[g].1 += feats.values[[i, 1]];
        groups[g].3 += 1;
    }
    for g in groups.iter_mut() { g.0 /= g.3 as f64; g.1 /= g.3 as f64; }
    for (i, s) in outcome.test_set.iter().enumerate() {
        let g = if s.is_poisoned { 2 } else { s.true_label as usize };
        let dx = feats.values[[i, 0]] - groups[g].0;
        let dy = feats.values[[i, 1]] - groups[g].1;
        groups[g].2 += (dx * dx + dy * dy).sqrt();
    }
    for (gi, name) in ["source", "target", "backdoor"].iter().enumerate() {
        let g = groups[gi];
        println!("{name:<9} centroid ({:+.3}, {:+.3}) mean-radius {:.3} n={}", g.0, g.1, g.2 / g.3 as f64, g.3);
    }
}
