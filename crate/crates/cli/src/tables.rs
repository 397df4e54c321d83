//! Aggregation over repeats and rendering of the two summary tables:
//! detection performance (measurement pipeline vs raw clustering) and
//! cluster counts (actual vs predicted per category).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use qsentry_core::data::LabeledSample;
use qsentry_core::detector::DetectionReport;

use crate::artifacts::PipelineSummary;
use crate::config::AttackKind;
use crate::experiment::{CellOutcome, CellSpec};

/// Per-category (source, target, backdoor) sizes predicted by a clustering:
/// the minority cluster is the predicted backdoor set, every other cluster
/// votes source or target by the majority true label of its members.
pub fn category_prediction(
    report: &DetectionReport,
    test_set: &[LabeledSample],
) -> (usize, usize, usize) {
    let k = report.cluster_sizes.len();
    let mut pred = (0usize, 0usize, report.cluster_sizes[report.minority_cluster]);
    for cluster in 0..k {
        if cluster == report.minority_cluster {
            continue;
        }
        let mut class_counts = [0usize; 2];
        let mut size = 0usize;
        for (i, &assignment) in report.assignments.iter().enumerate() {
            if assignment == cluster {
                class_counts[test_set[i].true_label as usize] += 1;
                size += 1;
            }
        }
        if class_counts[1] > class_counts[0] {
            pred.1 += size;
        } else {
            pred.0 += size;
        }
    }
    pred
}

/// One repeat's headline numbers, kept for aggregation and JSON dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub attack: AttackKind,
    pub rate: f64,
    pub repeat: u64,
    pub ca: f64,
    pub asr: Option<f64>,
    pub measurement: PipelineSummary,
    pub raw: PipelineSummary,
    pub pred_counts: (usize, usize, usize),
    pub actual_counts: (usize, usize, usize),
    /// (minority-cluster mean silhouette, smallest clean-cluster mean).
    pub flagged_silhouette: f64,
    pub min_clean_silhouette: f64,
}

impl CellStats {
    pub fn from_outcome(outcome: &CellOutcome) -> Self {
        let report = &outcome.report;
        let flagged_silhouette = report.cluster_mean_silhouette[report.minority_cluster];
        let min_clean_silhouette = report
            .cluster_mean_silhouette
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != report.minority_cluster)
            .map(|(_, &s)| s)
            .fold(f64::INFINITY, f64::min);
        Self {
            attack: outcome.cell.attack,
            rate: outcome.cell.rate,
            repeat: outcome.cell.repeat,
            ca: outcome.ca,
            asr: outcome.asr,
            measurement: PipelineSummary::from_report(report),
            raw: PipelineSummary::from_report(&outcome.raw_report),
            pred_counts: category_prediction(report, &outcome.test_set),
            actual_counts: outcome.actual_composition,
            flagged_silhouette,
            min_clean_silhouette,
        }
    }

    pub fn cell(&self) -> CellSpec {
        CellSpec {
            attack: self.attack,
            rate: self.rate,
            repeat: self.repeat,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Repeats of one (attack, rate) cell averaged together.
#[derive(Debug, Clone)]
pub struct CellAggregate {
    pub attack: AttackKind,
    pub rate: f64,
    pub repeats: usize,
    pub ca: (f64, f64),
    pub asr: Option<(f64, f64)>,
    pub q_da: (f64, f64),
    pub q_f1: Option<(f64, f64)>,
    pub raw_da: (f64, f64),
    pub raw_f1: Option<(f64, f64)>,
    pub q_sc: (f64, f64),
    pub q_rcs: (f64, f64),
    pub pred_mean: (f64, f64, f64),
    pub actual: (usize, usize, usize),
    pub flagged_mean: f64,
    pub flagged_silhouette_mean: f64,
    pub min_clean_silhouette_mean: f64,
}

fn opt_mean(values: Vec<Option<f64>>) -> Option<(f64, f64)> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(mean_std(&present))
    }
}

/// Group per-repeat stats by (attack, rate), preserving the grid order.
pub fn aggregate(rows: &[CellStats]) -> Vec<CellAggregate> {
    let mut grouped: BTreeMap<(u64, u64), Vec<&CellStats>> = BTreeMap::new();
    for row in rows {
        let key = (row.attack.id(), (row.rate * 1000.0).round() as u64);
        grouped.entry(key).or_default().push(row);
    }
    grouped
        .into_values()
        .map(|group| {
            let first = group[0];
            let ca = mean_std(&group.iter().map(|r| r.ca).collect::<Vec<_>>());
            let asr = opt_mean(group.iter().map(|r| r.asr).collect());
            let q_da = mean_std(
                &group
                    .iter()
                    .filter_map(|r| r.measurement.detection_accuracy)
                    .collect::<Vec<_>>(),
            );
            let q_f1 = opt_mean(group.iter().map(|r| r.measurement.f1).collect());
            let raw_da = mean_std(
                &group
                    .iter()
                    .filter_map(|r| r.raw.detection_accuracy)
                    .collect::<Vec<_>>(),
            );
            let raw_f1 = opt_mean(group.iter().map(|r| r.raw.f1).collect());
            let q_sc = mean_std(&group.iter().map(|r| r.measurement.sc).collect::<Vec<_>>());
            let q_rcs = mean_std(&group.iter().map(|r| r.measurement.rcs).collect::<Vec<_>>());
            let pred_mean = (
                mean_std(&group.iter().map(|r| r.pred_counts.0 as f64).collect::<Vec<_>>()).0,
                mean_std(&group.iter().map(|r| r.pred_counts.1 as f64).collect::<Vec<_>>()).0,
                mean_std(&group.iter().map(|r| r.pred_counts.2 as f64).collect::<Vec<_>>()).0,
            );
            let flagged_mean = mean_std(
                &group
                    .iter()
                    .map(|r| r.measurement.flagged as f64)
                    .collect::<Vec<_>>(),
            )
            .0;
            let flagged_silhouette_mean = mean_std(
                &group
                    .iter()
                    .map(|r| r.flagged_silhouette)
                    .collect::<Vec<_>>(),
            )
            .0;
            let min_clean_silhouette_mean = mean_std(
                &group
                    .iter()
                    .map(|r| r.min_clean_silhouette)
                    .collect::<Vec<_>>(),
            )
            .0;
            CellAggregate {
                attack: first.attack,
                rate: first.rate,
                repeats: group.len(),
                ca,
                asr,
                q_da,
                q_f1,
                raw_da,
                raw_f1,
                q_sc,
                q_rcs,
                pred_mean,
                actual: first.actual_counts,
                flagged_mean,
                flagged_silhouette_mean,
                min_clean_silhouette_mean,
            }
        })
        .collect()
}

const RATES: [f64; 3] = [0.01, 0.05, 0.10];
const ATTACKS: [AttackKind; 4] = [
    AttackKind::Patch,
    AttackKind::Blend,
    AttackKind::Sinusoidal,
    AttackKind::Qtrojan,
];

fn find<'a>(aggregates: &'a [CellAggregate], attack: AttackKind, rate: f64) -> Option<&'a CellAggregate> {
    aggregates
        .iter()
        .find(|a| a.attack == attack && (a.rate - rate).abs() < 1e-9)
}

fn da_f1_cell(da: (f64, f64), f1: Option<(f64, f64)>) -> String {
    let f1_text = match f1 {
        Some((mean, _)) => format!("{:.1}%", mean * 100.0),
        None => "absent".to_string(),
    };
    format!("{:.1}% / {}", da.0 * 100.0, f1_text)
}

/// The detection-performance table: rows are attack modes, column pairs are
/// (measurement pipeline, raw clustering) per poisoning rate, cells DA / F1.
pub fn render_detection_table(aggregates: &[CellAggregate]) -> String {
    let mut out = String::new();
    out.push_str(
        "Detection performance: QSentry (measurement clustering) vs Raw (pixel clustering)\n",
    );
    out.push_str(&format!("{:<22}", "Attack Mode"));
    for rate in RATES {
        out.push_str(&format!(
            "| {:^15} | {:^15} ",
            format!("QSentry {:.0}%", rate * 100.0),
            format!("Raw {:.0}%", rate * 100.0)
        ));
    }
    out.push_str("|\n");
    out.push_str(&"-".repeat(22 + 6 * 19 + 1));
    out.push('\n');
    for attack in ATTACKS {
        out.push_str(&format!("{:<22}", attack.table_name()));
        for rate in RATES {
            match find(aggregates, attack, rate) {
                Some(agg) => out.push_str(&format!(
                    "| {:^15} | {:^15} ",
                    da_f1_cell(agg.q_da, agg.q_f1),
                    da_f1_cell(agg.raw_da, agg.raw_f1)
                )),
                None => out.push_str(&format!("| {:^15} | {:^15} ", "-", "-")),
            }
        }
        out.push_str("|\n");
    }
    out
}

pub fn detection_table_csv(aggregates: &[CellAggregate]) -> String {
    let mut out = String::from(
        "attack,rate,pipeline,da_mean,da_std,f1_mean,f1_std,sc_mean,rcs_mean,ca_mean,asr_mean,repeats\n",
    );
    for agg in aggregates {
        for (pipeline, da, f1) in [
            ("qsentry", agg.q_da, agg.q_f1),
            ("raw", agg.raw_da, agg.raw_f1),
        ] {
            let (f1_mean, f1_std) = match f1 {
                Some((m, s)) => (format!("{m}"), format!("{s}")),
                None => (String::new(), String::new()),
            };
            let asr = agg.asr.map(|(m, _)| format!("{m}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                agg.attack.label(),
                agg.rate,
                pipeline,
                da.0,
                da.1,
                f1_mean,
                f1_std,
                agg.q_sc.0,
                agg.q_rcs.0,
                agg.ca.0,
                asr,
                agg.repeats
            ));
        }
    }
    out
}

/// Cluster-count table: per rate and category, actual vs predicted (mean
/// over repeats, Δ = Pred − Act) for each attack.
pub fn render_cluster_table(
    aggregates: &[CellAggregate],
    source_digit: u8,
    target_digit: u8,
) -> String {
    let mut out = String::new();
    out.push_str("Cluster counts: Actual vs Predicted (mean over repeats), Delta = Pred - Act\n");
    out.push_str(&format!("{:<6}{:<12}", "Rate", "Category"));
    for attack in ATTACKS {
        out.push_str(&format!("| {:^20} ", attack.table_name()));
    }
    out.push_str("|\n");
    out.push_str(&format!("{:<6}{:<12}", "", ""));
    for _ in ATTACKS {
        out.push_str(&format!("| {:>6} {:>6} {:>6} ", "Act", "Pred", "D"));
    }
    out.push_str("|\n");
    out.push_str(&"-".repeat(18 + 4 * 23 + 1));
    out.push('\n');
    for rate in RATES {
        let categories = [
            format!("Source {source_digit}"),
            format!("Target {target_digit}"),
            "Backdoor".to_string(),
        ];
        for (ci, category) in categories.iter().enumerate() {
            if ci == 0 {
                out.push_str(&format!("{:<6}", format!("{:.0}%", rate * 100.0)));
            } else {
                out.push_str(&format!("{:<6}", ""));
            }
            out.push_str(&format!("{category:<12}"));
            for attack in ATTACKS {
                match find(aggregates, attack, rate) {
                    Some(agg) => {
                        let (act, pred) = match ci {
                            0 => (agg.actual.0 as f64, agg.pred_mean.0),
                            1 => (agg.actual.1 as f64, agg.pred_mean.1),
                            _ => (agg.actual.2 as f64, agg.pred_mean.2),
                        };
                        out.push_str(&format!(
                            "| {:>6.0} {:>6.1} {:>+6.1} ",
                            act,
                            pred,
                            pred - act
                        ));
                    }
                    None => out.push_str(&format!("| {:>6} {:>6} {:>6} ", "-", "-", "-")),
                }
            }
            out.push_str("|\n");
        }
    }
    out
}

pub fn cluster_table_csv(aggregates: &[CellAggregate]) -> String {
    let mut out =
        String::from("attack,rate,category,actual,predicted_mean,delta_mean,repeats\n");
    for agg in aggregates {
        if matches!(agg.attack, AttackKind::None) {
            continue;
        }
        for (category, act, pred) in [
            ("source", agg.actual.0 as f64, agg.pred_mean.0),
            ("target", agg.actual.1 as f64, agg.pred_mean.1),
            ("backdoor", agg.actual.2 as f64, agg.pred_mean.2),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                agg.attack.label(),
                agg.rate,
                category,
                act,
                pred,
                pred - act,
                agg.repeats
            ));
        }
    }
    out
}
