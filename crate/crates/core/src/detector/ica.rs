//! Feature transformations for the measurement matrix: FastICA and PCA.
//!
//! Both are backed by a cyclic Jacobi eigendecomposition; the matrices here
//! top out at a few hundred columns, so a dependency-free solver keeps the
//! whole transform deterministic down to the bit.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and matching eigenvector columns,
/// sign-normalized so the largest-magnitude entry of each column is positive.
pub(crate) fn symmetric_eigh(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    let mut a = m.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = 1e-14 * fro.max(f64::MIN_POSITIVE);
    let skip = stop / (n as f64).max(1.0);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= skip {
                    continue;
                }
                let tau = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let mut max_abs = 0.0;
        let mut max_sign = 1.0;
        for k in 0..n {
            let val = v[[k, src]];
            if val.abs() > max_abs {
                max_abs = val.abs();
                max_sign = if val >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for k in 0..n {
            vectors[[k, col]] = v[[k, src]] * max_sign;
        }
    }
    (values, vectors)
}

fn column_means(x: &Array2<f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    x.sum_axis(ndarray::Axis(0)) / n
}

fn covariance(centered: &Array2<f64>) -> Array2<f64> {
    let n = centered.nrows() as f64;
    centered.t().dot(centered) / (n - 1.0)
}

fn check_rank(values: &[f64], d: usize) -> Result<()> {
    let scale = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = scale * 1e-10 + 1e-15;
    for (i, &val) in values.iter().enumerate().take(d) {
        if val <= tol {
            return Err(Error::Rank {
                required: d,
                deficient: i,
            });
        }
    }
    Ok(())
}

/// Fitted linear transform, kept for audit: row-space projection applied to
/// centered inputs.
#[derive(Debug, Clone)]
pub struct FittedTransform {
    /// Per-column mean subtracted before projection.
    pub mean: Array1<f64>,
    /// d×C projection matrix (C = columns of the fitted data).
    pub projection: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Project centered data onto the top-d principal directions.
pub fn pca(x: &Array2<f64>, d: usize) -> Result<(Array2<f64>, FittedTransform)> {
    let (n, c) = (x.nrows(), x.ncols());
    if d < 1 || d > c {
        return Err(Error::Shape(format!("d = {d} out of range for {c} columns")));
    }
    if n <= d {
        return Err(Error::Shape(format!("need more than d = {d} samples, got {n}")));
    }
    let mean = column_means(x);
    let centered = x - &mean.view().insert_axis(ndarray::Axis(0));
    let (values, vectors) = symmetric_eigh(&covariance(&centered));
    check_rank(&values, d)?;
    let components = vectors.slice(ndarray::s![.., ..d]).to_owned(); // C×d
    let scores = centered.dot(&components);
    Ok((
        scores,
        FittedTransform {
            mean,
            projection: components.t().to_owned(),
            iterations: 0,
            converged: true,
        },
    ))
}

/// W ← (W·Wᵀ)^{-1/2}·W.
fn sym_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    let (values, vectors) = symmetric_eigh(&w.dot(&w.t()));
    let d = w.nrows();
    let mut inv_sqrt = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let lam = values[k].max(1e-14);
                acc += vectors[[i, k]] * vectors[[j, k]] / lam.sqrt();
            }
            inv_sqrt[[i, j]] = acc;
        }
    }
    inv_sqrt.dot(w)
}

/// FastICA with the tanh contrast and symmetric decorrelation.
///
/// The data is centered, whitened to `d` dimensions by eigendecomposition of
/// the covariance, and the d×d unmixing rotation is found by fixed-point
/// iteration from a seeded random start. Stops when the largest component
/// rotation falls below `tol` or after `max_iter` iterations.
pub fn fast_ica(
    x: &Array2<f64>,
    d: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(Array2<f64>, FittedTransform)> {
    let (n, c) = (x.nrows(), x.ncols());
    if d < 1 || d > c {
        return Err(Error::Shape(format!("d = {d} out of range for {c} columns")));
    }
    if n <= d {
        return Err(Error::Shape(format!("need more than d = {d} samples, got {n}")));
    }
    let mean = column_means(x);
    let centered = x - &mean.view().insert_axis(ndarray::Axis(0));
    let (values, vectors) = symmetric_eigh(&covariance(&centered));
    check_rank(&values, d)?;

    // d×C whitening: scaled top-d eigenvector rows.
    let mut whitening = Array2::zeros((d, c));
    for i in 0..d {
        let scale = 1.0 / values[i].sqrt();
        for j in 0..c {
            whitening[[i, j]] = vectors[[j, i]] * scale;
        }
    }
    let z = whitening.dot(&centered.t()); // d×n whitened signals

    let mut rng = rng_from_seed(seed);
    let mut w = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
    w = sym_decorrelation(&w);

    let mut converged = false;
    let mut iterations = max_iter;
    for it in 0..max_iter {
        let y = w.dot(&z); // d×n
        let g = y.mapv(f64::tanh);
        let g_prime_mean = g
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64)
            .collect::<Vec<_>>();
        let mut w1 = g.dot(&z.t()) / n as f64;
        for i in 0..d {
            for j in 0..d {
                w1[[i, j]] -= g_prime_mean[i] * w[[i, j]];
            }
        }
        let w_new = sym_decorrelation(&w1);
        let lim = (0..d)
            .map(|i| {
                let dot: f64 = (0..d).map(|j| w_new[[i, j]] * w[[i, j]]).sum();
                (dot.abs() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        w = w_new;
        if lim < tol {
            converged = true;
            iterations = it + 1;
            break;
        }
    }

    let sources = w.dot(&z).t().to_owned(); // n×d
    let projection = w.dot(&whitening);
    Ok((
        sources,
        FittedTransform {
            mean,
            projection,
            iterations,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn jacobi_solves_known_two_by_two() {
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let (values, vectors) = symmetric_eigh(&m);
        assert!((values[0] - 3.0).abs() < 1e-12);
        assert!((values[1] - 1.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vectors[[0, 0]].abs() - s).abs() < 1e-12);
        assert!((vectors[[1, 0]].abs() - s).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrices() {
        let mut rng = rng_from_seed(31);
        for _ in 0..10 {
            let n = rng.gen_range(2..10);
            let raw = Array2::from_shape_fn((n, n), |_| rng.gen_range(-2.0..2.0));
            let sym = (&raw + &raw.t()) / 2.0;
            let (values, vectors) = symmetric_eigh(&sym);
            // A v_i = lambda_i v_i
            for i in 0..n {
                let v = vectors.column(i);
                let av = sym.dot(&v);
                for k in 0..n {
                    assert!(
                        (av[k] - values[i] * v[k]).abs() < 1e-9,
                        "eigenpair {i} residual too large"
                    );
                }
            }
            // Orthonormal columns.
            let vtv = vectors.t().dot(&vectors);
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[[i, j]] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn pca_on_a_line_preserves_pairwise_distances() {
        // Points on the line y = 2x, rank-1 data.
        let xs = [0.0, 1.0, 2.5, -1.0, 4.0];
        let data = Array2::from_shape_fn((5, 2), |(i, j)| {
            if j == 0 {
                xs[i]
            } else {
                2.0 * xs[i]
            }
        });
        let (scores, _) = pca(&data, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let orig = ((xs[i] - xs[j]).powi(2) * 5.0).sqrt();
                let proj = (scores[[i, 0]] - scores[[j, 0]]).abs();
                assert!((orig - proj).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_request_is_rank_error() {
        let xs = [0.0, 1.0, 2.5, -1.0, 4.0];
        let data = Array2::from_shape_fn((5, 2), |(i, j)| {
            if j == 0 {
                xs[i]
            } else {
                2.0 * xs[i]
            }
        });
        match pca(&data, 2) {
            Err(Error::Rank { required, deficient }) => {
                assert_eq!(required, 2);
                assert_eq!(deficient, 1);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
        assert!(matches!(
            fast_ica(&Array2::from_elem((10, 3), 1.0), 1, 0, 100, 1e-6),
            Err(Error::Rank { .. })
        ));
    }

    /// Pearson correlation of two equally long slices.
    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    /// Mix two independent uniform sources with a known matrix and check
    /// FastICA recovers them up to permutation and sign.
    pub(crate) fn ica_recovers_mixed_uniforms(seed: u64) -> f64 {
        let mut rng = rng_from_seed(seed);
        let n = 500;
        let s1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mixing = [
            [rng.gen_range(0.5..2.0), rng.gen_range(-1.5..-0.3)],
            [rng.gen_range(0.3..1.5), rng.gen_range(0.4..2.0)],
        ];
        let data = Array2::from_shape_fn((n, 2), |(i, j)| {
            mixing[j][0] * s1[i] + mixing[j][1] * s2[i]
        });
        let (sources, _) = fast_ica(&data, 2, seed ^ 0xabcd, 500, 1e-6).unwrap();
        let r1: Vec<f64> = sources.column(0).to_vec();
        let r2: Vec<f64> = sources.column(1).to_vec();
        // Best assignment over the two permutations.
        let perm_a = correlation(&s1, &r1).abs().min(correlation(&s2, &r2).abs());
        let perm_b = correlation(&s1, &r2).abs().min(correlation(&s2, &r1).abs());
        perm_a.max(perm_b)
    }

    #[test]
    fn ica_separates_uniform_sources() {
        for seed in 0..5 {
            let worst = ica_recovers_mixed_uniforms(seed);
            assert!(worst >= 0.95, "seed {seed}: correlation {worst}");
        }
    }

    #[test]
    fn ica_is_deterministic_for_a_fixed_seed() {
        let mut rng = rng_from_seed(8);
        let data = Array2::from_shape_fn((200, 4), |_| rng.gen_range(-1.0..1.0));
        let (a, _) = fast_ica(&data, 2, 99, 500, 1e-6).unwrap();
        let (b, _) = fast_ica(&data, 2, 99, 500, 1e-6).unwrap();
        assert_eq!(a, b);
    }
}
