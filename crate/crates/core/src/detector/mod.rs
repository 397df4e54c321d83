//! Measurement-clustering backdoor detector.
//!
//! The pipeline collects per-qubit Z-expectations for every test sample,
//! projects the N×Q activation matrix to a low-dimensional space (ICA by
//! default), clusters it with k-means, and flags the minority cluster as the
//! suspected backdoor set. A raw-pixel variant of the same pipeline serves
//! as the comparison baseline.

pub mod ica;
pub mod kmeans;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::metrics::{self, Confusion};
use crate::model::{measure_all, CircuitSpec, ModelParams};
use crate::rng::rng_from_seed;
use crate::statevector::{amplitude_encode, run_circuit, sampled_expectation_z};

pub use ica::FittedTransform;
pub use kmeans::{kmeans, silhouette, ClusterResult};

/// N×Q matrix of per-sample Pauli-Z expectations, rows aligned with
/// `sample_ids` (positions in the scored set).
#[derive(Debug, Clone)]
pub struct MeasurementMatrix {
    pub values: Array2<f64>,
    pub sample_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Ica,
    Pca,
    Identity,
}

/// Low-dimensional features emitted by `transform_features`, with the fitted
/// projection kept for audit.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub transform_kind: TransformKind,
    /// Indices of the input columns that survived the constant-column drop.
    pub kept_columns: Vec<usize>,
    pub fitted: Option<FittedTransform>,
}

/// Knobs of the measurement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementOptions {
    /// Binomial shot sampling per expectation; `None` keeps exact values.
    pub shots: Option<u64>,
    pub seed: u64,
}

impl Default for MeasurementOptions {
    fn default() -> Self {
        Self {
            shots: None,
            seed: 0,
        }
    }
}

/// Knobs of the detection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub transform: TransformKind,
    /// Target dimensionality of the transform.
    pub d: usize,
    pub k_candidates: Vec<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub shots: Option<u64>,
    /// Mean silhouette below which every candidate K is called inconclusive.
    pub inconclusive_sc: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            transform: TransformKind::Ica,
            d: 2,
            k_candidates: vec![2, 3],
            restarts: 10,
            max_iter: 300,
            seed: 0,
            shots: None,
            inconclusive_sc: 0.2,
        }
    }
}

/// Everything one detection run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Members of the minority cluster, by position in the scored set.
    pub flagged_indices: Vec<usize>,
    /// Cluster index per sample, aligned with the scored set.
    pub assignments: Vec<usize>,
    pub chosen_k: usize,
    pub minority_cluster: usize,
    pub cluster_sizes: Vec<usize>,
    /// Mean silhouette per cluster, indexed by cluster.
    pub cluster_mean_silhouette: Vec<f64>,
    /// Mean silhouette over all samples.
    pub sc: f64,
    /// Minority-cluster fraction of the scored set.
    pub rcs: f64,
    /// Per-sample silhouette values.
    pub per_sample_scores: Vec<f64>,
    /// (candidate K, mean silhouette) pairs examined by the K selection.
    pub candidate_scores: Vec<(usize, f64)>,
    /// Set when every candidate K scored below the separation threshold.
    pub inconclusive: bool,
    pub confusion: Option<Confusion>,
    pub detection_accuracy: Option<f64>,
    /// Absent when the scored set has no true poisons (undefined), or when
    /// there are no positives anywhere.
    pub f1: Option<f64>,
}

/// Run every sample through the model and record all Q expectations.
/// For a trojan-carrying spec, the trojan layer fires exactly for the
/// samples marked as carrying the trigger.
pub fn collect_measurements(
    spec: &CircuitSpec,
    params: &ModelParams,
    samples: &[LabeledSample],
    options: &MeasurementOptions,
) -> Result<MeasurementMatrix> {
    let q = spec.num_qubits;
    let rows: Vec<Result<Vec<f64>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| match options.shots {
            None => measure_all(spec, params, &sample.features, sample.is_poisoned),
            Some(shots) => {
                let input = amplitude_encode(&sample.features)?;
                let gates = spec.inference_gates(sample.is_poisoned);
                let state = run_circuit(&gates, &params.theta, &input)?;
                let mut rng = rng_from_seed(options.seed ^ (i as u64).wrapping_mul(0x9e37));
                (0..q)
                    .map(|qubit| sampled_expectation_z(&state, qubit, shots, &mut rng))
                    .collect()
            }
        })
        .collect();

    let mut values = Array2::zeros((samples.len(), q));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(MeasurementMatrix {
        values,
        sample_ids: (0..samples.len()).collect(),
    })
}

/// Project an activation matrix to `d` dimensions. Constant columns are
/// dropped before fitting; ICA and PCA are seeded and deterministic.
pub fn transform_features(
    values: &Array2<f64>,
    kind: TransformKind,
    d: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    let (n, cols) = (values.nrows(), values.ncols());
    if d < 1 {
        return Err(Error::Shape("d must be at least 1".into()));
    }
    if n <= d {
        return Err(Error::Shape(format!("need more than d = {d} samples, got {n}")));
    }

    if matches!(kind, TransformKind::Identity) {
        return Ok(FeatureMatrix {
            values: values.clone(),
            transform_kind: kind,
            kept_columns: (0..cols).collect(),
            fitted: None,
        });
    }

    let kept_columns: Vec<usize> = (0..cols)
        .filter(|&j| {
            let col = values.column(j);
            let first = col[0];
            col.iter().any(|&v| (v - first).abs() > 1e-12)
        })
        .collect();
    if kept_columns.len() < d {
        return Err(Error::Rank {
            required: d,
            deficient: kept_columns.len(),
        });
    }
    let mut kept = Array2::zeros((n, kept_columns.len()));
    for (jj, &j) in kept_columns.iter().enumerate() {
        kept.column_mut(jj).assign(&values.column(j));
    }

    let (projected, fitted) = match kind {
        TransformKind::Ica => ica::fast_ica(&kept, d, seed, 500, 1e-6)?,
        TransformKind::Pca => ica::pca(&kept, d)?,
        TransformKind::Identity => unreachable!(),
    };
    Ok(FeatureMatrix {
        values: projected,
        transform_kind: kind,
        kept_columns,
        fitted: Some(fitted),
    })
}

/// Mean silhouette of a k-means run for each candidate K.
pub fn candidate_scores(
    features: &Array2<f64>,
    candidates: &[usize],
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut scores = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let result = kmeans(features, k, seed, restarts, max_iter)?;
        let (_, sc) = silhouette(features, &result.assignments)?;
        scores.push((k, sc));
    }
    Ok(scores)
}

/// K with the highest mean silhouette among the candidates; ties go to the
/// smaller K.
pub fn select_k(
    features: &Array2<f64>,
    candidates: &[usize],
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<usize> {
    let scores = candidate_scores(features, candidates, seed, restarts, max_iter)?;
    let mut sorted = scores;
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut best = match sorted.first() {
        Some(&(k, sc)) => (k, sc),
        None => return Err(Error::Domain("no candidate K given".into())),
    };
    for &(k, sc) in &sorted[1..] {
        if sc > best.1 {
            best = (k, sc);
        }
    }
    Ok(best.0)
}

/// Index of the smallest cluster; size ties go to the cluster whose members
/// sit farther (on average) from the global centroid.
pub fn identify_minority(result: &ClusterResult, features: &Array2<f64>) -> Result<usize> {
    if result.k < 2 {
        return Err(Error::Domain("minority cluster undefined for K=1".into()));
    }
    let sizes = result.cluster_sizes();
    let n = result.assignments.len();
    let d = features.ncols();
    let mut global = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            global[j] += features[[i, j]];
        }
    }
    global.iter_mut().for_each(|v| *v /= n as f64);

    let mean_dist = |cluster: usize| -> f64 {
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..n {
            if result.assignments[i] == cluster {
                let mut dd = 0.0;
                for j in 0..d {
                    let diff = features[[i, j]] - global[j];
                    dd += diff * diff;
                }
                acc += dd.sqrt();
                count += 1;
            }
        }
        acc / count.max(1) as f64
    };

    let mut best = 0;
    for c in 1..result.k {
        if sizes[c] < sizes[best] || (sizes[c] == sizes[best] && mean_dist(c) > mean_dist(best)) {
            best = c;
        }
    }
    Ok(best)
}

/// |minority| / N after pooling all non-minority clusters as clean.
pub fn relative_cluster_size(result: &ClusterResult) -> f64 {
    let sizes = result.cluster_sizes();
    let minority = sizes.iter().copied().min().unwrap_or(0);
    minority as f64 / result.assignments.len() as f64
}

fn report_from_features(
    features: &Array2<f64>,
    samples: &[LabeledSample],
    options: &DetectOptions,
) -> Result<DetectionReport> {
    let scores = candidate_scores(
        features,
        &options.k_candidates,
        options.seed,
        options.restarts,
        options.max_iter,
    )?;
    let chosen_k = select_k(
        features,
        &options.k_candidates,
        options.seed,
        options.restarts,
        options.max_iter,
    )?;
    let inconclusive = scores.iter().all(|&(_, sc)| sc < options.inconclusive_sc);

    let result = kmeans(
        features,
        chosen_k,
        options.seed,
        options.restarts,
        options.max_iter,
    )?;
    let minority = identify_minority(&result, features)?;
    let flagged_indices: Vec<usize> = result
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == minority)
        .map(|(i, _)| i)
        .collect();

    let (per_sample_scores, sc) = silhouette(features, &result.assignments)?;
    let sizes = result.cluster_sizes();
    let mut cluster_mean_silhouette = vec![0.0; result.k];
    for (i, &c) in result.assignments.iter().enumerate() {
        cluster_mean_silhouette[c] += per_sample_scores[i];
    }
    for (mean, &size) in cluster_mean_silhouette.iter_mut().zip(&sizes) {
        *mean /= size.max(1) as f64;
    }
    let rcs = relative_cluster_size(&result);

    let truth: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_poisoned)
        .map(|(i, _)| i)
        .collect();
    let confusion = metrics::confusion(&flagged_indices, &truth, samples.len())?;
    let detection_accuracy = Some(metrics::detection_accuracy(&confusion)?);
    let f1 = if truth.is_empty() {
        None
    } else {
        metrics::f1(&confusion)
    };

    Ok(DetectionReport {
        flagged_indices,
        assignments: result.assignments.clone(),
        chosen_k,
        minority_cluster: minority,
        cluster_sizes: sizes,
        cluster_mean_silhouette,
        sc,
        rcs,
        per_sample_scores,
        candidate_scores: scores,
        inconclusive,
        confusion: Some(confusion),
        detection_accuracy,
        f1,
    })
}

/// The full detection pipeline on measurement activations:
/// collect → transform (ICA, d=2 by default) → select K → k-means →
/// flag the minority cluster.
pub fn detect(
    spec: &CircuitSpec,
    params: &ModelParams,
    test_samples: &[LabeledSample],
    options: &DetectOptions,
) -> Result<DetectionReport> {
    let measurements = collect_measurements(
        spec,
        params,
        test_samples,
        &MeasurementOptions {
            shots: options.shots,
            seed: options.seed,
        },
    )?;
    let features =
        transform_features(&measurements.values, options.transform, options.d, options.seed)?;
    report_from_features(&features.values, test_samples, options)
}

/// The identical pipeline fed with raw 256-dim pixel features instead of the
/// measurement matrix; used for the comparison table only.
pub fn detect_raw_baseline(
    test_samples: &[LabeledSample],
    options: &DetectOptions,
) -> Result<DetectionReport> {
    let n = test_samples.len();
    if n == 0 {
        return Err(Error::Domain("detection on an empty set".into()));
    }
    let dim = test_samples[0].features.len();
    let mut values = Array2::zeros((n, dim));
    for (i, sample) in test_samples.iter().enumerate() {
        if sample.features.len() != dim {
            return Err(Error::Shape("inconsistent feature lengths".into()));
        }
        for (j, &v) in sample.features.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let features = transform_features(&values, options.transform, options.d, options.seed)?;
    report_from_features(&features.values, test_samples, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use ndarray::array;

    fn sample(features: Vec<f64>, class: u8, poisoned: bool, idx: usize) -> LabeledSample {
        LabeledSample {
            features,
            true_label: class,
            train_label: class,
            is_poisoned: poisoned,
            source_index: idx,
        }
    }

    #[test]
    fn identity_circuit_measurements_are_all_ones() {
        let spec = CircuitSpec {
            num_qubits: 2,
            num_layers: 1,
            trojan_layer: None,
        };
        let params = ModelParams::new(&spec, vec![0.0; spec.param_count()]).unwrap();
        let samples = vec![sample(vec![1.0, 0.0, 0.0, 0.0], 0, false, 0)];
        let m = collect_measurements(&spec, &params, &samples, &MeasurementOptions::default())
            .unwrap();
        assert_eq!(m.values.shape(), &[1, 2]);
        assert!((m.values[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((m.values[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measurement_matrix_shape_and_purity() {
        let spec = CircuitSpec {
            num_qubits: 3,
            num_layers: 2,
            trojan_layer: None,
        };
        let params = ModelParams::init(&spec, 3);
        let one = sample(vec![0.4, 0.1, 0.0, 0.3, 0.0, 0.2, 0.0, 0.1], 0, false, 0);
        let samples = vec![one.clone(), one.clone(), one];
        let m = collect_measurements(&spec, &params, &samples, &MeasurementOptions::default())
            .unwrap();
        assert_eq!(m.values.shape(), &[3, 3]);
        for j in 0..3 {
            assert_eq!(m.values[[0, j]].to_bits(), m.values[[1, j]].to_bits());
            assert_eq!(m.values[[0, j]].to_bits(), m.values[[2, j]].to_bits());
        }
        for v in m.values.iter() {
            assert!((-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn constant_matrix_is_rank_error() {
        let values = Array2::from_elem((10, 4), 0.25);
        assert!(matches!(
            transform_features(&values, TransformKind::Ica, 2, 0),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn too_few_samples_is_shape_error() {
        let values = Array2::zeros((2, 4));
        assert!(matches!(
            transform_features(&values, TransformKind::Pca, 2, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn constant_columns_are_dropped_before_fitting() {
        let mut rng = crate::rng::rng_from_seed(5);
        let mut values = Array2::zeros((50, 4));
        for i in 0..50 {
            values[[i, 0]] = 7.0; // constant
            values[[i, 1]] = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            values[[i, 2]] = 7.0; // constant
            values[[i, 3]] = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let features = transform_features(&values, TransformKind::Pca, 2, 0).unwrap();
        assert_eq!(features.kept_columns, vec![1, 3]);
        assert_eq!(features.values.shape(), &[50, 2]);
    }

    #[test]
    fn select_k_prefers_the_real_blob_count() {
        let mut rng = crate::rng::rng_from_seed(17);
        let blob = |cx: f64, cy: f64, n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    [
                        cx + rand::Rng::gen_range(rng, -0.4..0.4),
                        cy + rand::Rng::gen_range(rng, -0.4..0.4),
                    ]
                })
                .collect::<Vec<_>>()
        };
        let mut three = blob(0.0, 0.0, 40, &mut rng);
        three.extend(blob(8.0, 0.0, 40, &mut rng));
        three.extend(blob(4.0, 7.0, 40, &mut rng));
        let data = Array2::from_shape_fn((120, 2), |(i, j)| three[i][j]);
        assert_eq!(select_k(&data, &[2, 3], 1, 10, 300).unwrap(), 3);

        let mut two = blob(0.0, 0.0, 60, &mut rng);
        two.extend(blob(9.0, 0.0, 60, &mut rng));
        let data = Array2::from_shape_fn((120, 2), |(i, j)| two[i][j]);
        assert_eq!(select_k(&data, &[2, 3], 1, 10, 300).unwrap(), 2);
    }

    #[test]
    fn minority_rules() {
        let result = ClusterResult {
            assignments: [vec![0usize; 950], vec![1usize; 50]].concat(),
            centroids: array![[0.0], [5.0]],
            wcss: 0.0,
            k: 2,
        };
        let features = Array2::zeros((1000, 1));
        assert_eq!(identify_minority(&result, &features).unwrap(), 1);
        assert!((relative_cluster_size(&result) - 0.05).abs() < 1e-12);

        let result = ClusterResult {
            assignments: [vec![0usize; 495], vec![1usize; 498], vec![2usize; 7]].concat(),
            centroids: array![[0.0], [1.0], [9.0]],
            wcss: 0.0,
            k: 3,
        };
        let features = Array2::zeros((1000, 1));
        assert_eq!(identify_minority(&result, &features).unwrap(), 2);

        // Equal sizes: the cluster farther from the global centroid wins.
        let data = array![[0.0, 0.0], [0.2, 0.0], [10.0, 0.0], [30.0, 0.0]];
        let result = ClusterResult {
            assignments: vec![0, 0, 1, 1],
            centroids: array![[0.1, 0.0], [20.0, 0.0]],
            wcss: 0.0,
            k: 2,
        };
        assert_eq!(identify_minority(&result, &data).unwrap(), 1);

        let single = ClusterResult {
            assignments: vec![0, 0],
            centroids: array![[0.0]],
            wcss: 0.0,
            k: 1,
        };
        assert!(matches!(
            identify_minority(&single, &Array2::zeros((2, 1))),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rcs_boundary_cases() {
        let result = ClusterResult {
            assignments: [vec![0usize; 500], vec![1usize; 500]].concat(),
            centroids: array![[0.0], [1.0]],
            wcss: 0.0,
            k: 2,
        };
        assert!((relative_cluster_size(&result) - 0.5).abs() < 1e-12);
    }

    /// End-to-end report path on hand-made raw-feature geometry with a
    /// planted minority, independent of any trained model.
    #[test]
    fn raw_baseline_detects_a_planted_minority() {
        let mut rng = crate::rng::rng_from_seed(23);
        let mut samples = Vec::new();
        for i in 0..60 {
            let mut f = vec![0.0; 256];
            for v in f.iter_mut().take(40) {
                *v = 0.5 + rand::Rng::gen_range(&mut rng, -0.1..0.1);
            }
            samples.push(sample(f, 0, false, i));
        }
        for i in 0..60 {
            let mut f = vec![0.0; 256];
            for v in f.iter_mut().skip(200) {
                *v = 0.5 + rand::Rng::gen_range(&mut rng, -0.1..0.1);
            }
            samples.push(sample(f, 1, false, 60 + i));
        }
        for i in 0..6 {
            let mut f = vec![0.0; 256];
            for v in f.iter_mut().skip(100).take(40) {
                *v = 0.9 + rand::Rng::gen_range(&mut rng, -0.05..0.05);
            }
            samples.push(sample(f, 0, true, 120 + i));
        }
        let options = DetectOptions {
            seed: 3,
            ..DetectOptions::default()
        };
        let report = detect_raw_baseline(&samples, &options).unwrap();
        assert!(!report.inconclusive);
        assert_eq!(report.cluster_sizes.iter().sum::<usize>(), 126);
        let c = report.confusion.unwrap();
        assert_eq!(c.true_positives, 6, "planted minority found: {report:?}");
        assert_eq!(report.flagged_indices.len(), 6);
        assert!(report.f1.unwrap() > 0.99);
        assert!(report.rcs > 0.0 && report.rcs <= 0.5);
        // Report is deterministic.
        let again = detect_raw_baseline(&samples, &options).unwrap();
        assert_eq!(report.flagged_indices, again.flagged_indices);
        assert_eq!(report.sc.to_bits(), again.sc.to_bits());
    }

    #[test]
    fn clean_set_reports_absent_f1() {
        let mut rng = crate::rng::rng_from_seed(29);
        let mut samples = Vec::new();
        for i in 0..40 {
            let mut f = vec![0.0; 256];
            for v in f.iter_mut().take(30) {
                *v = 0.5 + rand::Rng::gen_range(&mut rng, -0.2..0.2);
            }
            samples.push(sample(f, 0, false, i));
        }
        for i in 0..40 {
            let mut f = vec![0.0; 256];
            for v in f.iter_mut().skip(220) {
                *v = 0.5 + rand::Rng::gen_range(&mut rng, -0.2..0.2);
            }
            samples.push(sample(f, 1, false, 40 + i));
        }
        let report = detect_raw_baseline(&samples, &DetectOptions::default()).unwrap();
        assert_eq!(report.f1, None);
        assert!(report.confusion.is_some());
    }
}
