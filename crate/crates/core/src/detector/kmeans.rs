//! K-means with k-means++ seeding, plus silhouette scoring.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Outcome of one k-means run: the minimal-WCSS restart.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Cluster index per row of the input, each in [0, k).
    pub assignments: Vec<usize>,
    /// K×d centroid matrix.
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares of the returned assignment.
    pub wcss: f64,
    pub k: usize,
}

impl ClusterResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties broken by the lowest cluster index.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus_init(
    data: ArrayView2<f64>,
    k: usize,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));

    let mut dist = vec![0.0; n];
    for chosen in 1..k {
        let mut total = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for c in 0..chosen {
                let dd = sq_dist(data.row(i), centroids.row(c));
                if dd < best {
                    best = dd;
                }
            }
            dist[i] = best;
            total += best;
        }
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &dd) in dist.iter().enumerate() {
                if target < dd {
                    pick = i;
                    break;
                }
                target -= dd;
            }
            pick
        } else {
            // All points coincide with a chosen centroid.
            rng.gen_range(0..n)
        };
        centroids.row_mut(chosen).assign(&data.row(idx));
    }
    centroids
}

/// One Lloyd run from given centroids. Returns the assignment, centroids,
/// final WCSS, and the WCSS recorded after every assignment step.
fn lloyd(
    data: ArrayView2<f64>,
    mut centroids: Array2<f64>,
    max_iter: usize,
) -> (Vec<usize>, Array2<f64>, f64, Vec<f64>) {
    let n = data.nrows();
    let d = data.ncols();
    let k = centroids.nrows();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut wcss = f64::INFINITY;

    for _ in 0..max_iter {
        let mut changed = false;
        wcss = 0.0;
        for i in 0..n {
            let (c, dd) = nearest(data.row(i), &centroids);
            wcss += dd;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }

        // Repair empty clusters: each takes the point currently farthest
        // from its own centroid.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        let mut taken = vec![false; n];
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far_i = 0;
            let mut far_d = -1.0;
            for i in 0..n {
                if taken[i] || sizes[assignments[i]] <= 1 {
                    continue;
                }
                let dd = sq_dist(data.row(i), centroids.row(assignments[i]));
                if dd > far_d {
                    far_d = dd;
                    far_i = i;
                }
            }
            sizes[assignments[far_i]] -= 1;
            assignments[far_i] = empty;
            sizes[empty] = 1;
            taken[far_i] = true;
            changed = true;
        }
        history.push(wcss);

        if !changed && history.len() > 1 {
            break;
        }

        centroids.fill(0.0);
        for i in 0..n {
            for j in 0..d {
                centroids[[assignments[i], j]] += data[[i, j]];
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let inv = 1.0 / sizes[c] as f64;
                for j in 0..d {
                    centroids[[c, j]] *= inv;
                }
            }
        }
    }

    // Final WCSS against the converged centroids.
    wcss = 0.0;
    for i in 0..n {
        wcss += sq_dist(data.row(i), centroids.row(assignments[i]));
    }
    (assignments, centroids, wcss, history)
}

/// Number of k-subsets of n points, saturating.
fn subset_count(n: usize, k: usize) -> usize {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Lexicographic enumeration of all k-subsets as seeding centroids.
fn exhaustive_seeds(data: ArrayView2<f64>, k: usize) -> Vec<Array2<f64>> {
    let n = data.nrows();
    let d = data.ncols();
    let mut seeds = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut c = Array2::zeros((k, d));
        for (row, &i) in idx.iter().enumerate() {
            c.row_mut(row).assign(&data.row(i));
        }
        seeds.push(c);
        // Advance the combination.
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if idx[pos] < n - (k - pos) {
                idx[pos] += 1;
                for later in pos + 1..k {
                    idx[later] = idx[later - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return seeds;
            }
        }
    }
}

/// K-means clustering: k-means++ seeding per restart, Lloyd iterations until
/// assignments stabilize, result taken from the restart with minimal WCSS.
///
/// On small inputs (at most 256 distinct k-subsets) the random restarts are
/// supplemented with Lloyd runs from every point subset, which pins the
/// minimal-WCSS partition exactly where brute force is checkable.
pub fn kmeans(
    data: &Array2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<ClusterResult> {
    let n = data.nrows();
    if k < 1 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds sample count {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut seeds: Vec<Array2<f64>> = (0..restarts.max(1))
        .map(|_| kmeans_plus_plus_init(data.view(), k, &mut rng))
        .collect();
    if subset_count(n, k) <= 256 {
        seeds.extend(exhaustive_seeds(data.view(), k));
    }
    let mut best: Option<ClusterResult> = None;
    for init in seeds {
        let (assignments, centroids, wcss, _) = lloyd(data.view(), init, max_iter);
        let better = match &best {
            None => true,
            Some(b) => wcss < b.wcss,
        };
        if better {
            best = Some(ClusterResult {
                assignments,
                centroids,
                wcss,
                k,
            });
        }
    }
    Ok(best.expect("at least one seeding"))
}

/// Per-sample silhouette values and their mean.
///
/// s(i) = (b(i) - a(i)) / max(a(i), b(i)) with Euclidean distances;
/// samples in singleton clusters get s(i) = 0.
pub fn silhouette(data: &Array2<f64>, assignments: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = data.nrows();
    if assignments.len() != n {
        return Err(Error::Shape(format!(
            "assignments length {} != sample count {n}",
            assignments.len()
        )));
    }
    let k = match assignments.iter().max() {
        Some(&m) => m + 1,
        None => return Err(Error::Domain("silhouette of an empty set".into())),
    };
    if k < 2 {
        return Err(Error::Domain("silhouette undefined for K=1".into()));
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }

    let mut scores = vec![0.0; n];
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[assignments[j]] += sq_dist(data.row(i), data.row(j)).sqrt();
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            scores[i] = 0.0;
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c == own || sizes[c] == 0 {
                continue;
            }
            let mean = sums[c] / sizes[c] as f64;
            if mean < b {
                b = mean;
            }
        }
        let denom = a.max(b);
        scores[i] = if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    Ok((scores, mean))
}
