//! RBF kernel machinery: median-heuristic bandwidth, MMD estimators, the
//! MMD concentration term, and kernel ridge regression for the RKHS-norm
//! scale `B̂`.

use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Target;
use crate::error::{check_open_unit, Error, Result};
use crate::models::{LossSpec, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    MedianHeuristic,
}

/// A fixed positive bandwidth or the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Rule(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MmdEstimator {
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    pub c_kappa: f64,
    pub mmd_estimator: MmdEstimator,
    /// Candidate regularization strengths for the RKHS-norm estimate.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Pooled samples larger than this are thinned by a fixed stride before
    /// the median heuristic.
    pub max_bandwidth_points: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: Bandwidth::Rule(BandwidthRule::MedianHeuristic),
            c_kappa: 1.0,
            mmd_estimator: MmdEstimator::Biased,
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            cv_folds: 5,
            max_bandwidth_points: 2000,
        }
    }
}

/// `exp(−‖x − y‖² / (2σ²))`.
pub fn rbf(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, sigma: f64) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        s += d * d;
    }
    (-s / (2.0 * sigma * sigma)).exp()
}

pub fn gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let m = b.nrows();
    let mut k = Array2::zeros((a.nrows(), m));
    k.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(a.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut row, ai)| {
            for (j, out) in row.iter_mut().enumerate() {
                *out = rbf(ai, b.row(j), sigma);
            }
        });
    k
}

fn pairwise_distances(z: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = z.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let diff = &z.row(i) - &z.row(j);
            d.push(diff.dot(&diff).sqrt());
        }
    }
    d
}

fn lower_median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

/// Lower median of the pairwise Euclidean distances of one sample.
///
/// When more than half the pairs coincide the median of the nonzero
/// distances is used instead. Samples larger than `max_points` are thinned
/// by a fixed stride first.
pub fn median_bandwidth_of(z: ArrayView2<'_, f64>, max_points: usize) -> Result<f64> {
    if z.nrows() < 2 {
        return Err(Error::invalid(
            "points",
            "the median heuristic needs at least two points",
        ));
    }
    let stride = z.nrows().div_ceil(max_points.max(2));
    let thinned = z.slice(ndarray::s![..;stride, ..]);
    let mut d = pairwise_distances(thinned);
    let med = lower_median(&mut d);
    if med > 0.0 {
        return Ok(med);
    }
    let mut nonzero: Vec<f64> = d.into_iter().filter(|&x| x > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate(
            "all points coincide; bandwidth is undefined".into(),
        ));
    }
    Ok(lower_median(&mut nonzero))
}

/// Median heuristic over the pooled sample `A ∪ B`.
pub fn median_bandwidth(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    median_bandwidth_pooled(a, b, KernelConfig::default().max_bandwidth_points)
}

fn median_bandwidth_pooled(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    max_points: usize,
) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let pooled = concatenate(Axis(0), &[a.view(), b.view()]).expect("column counts match");
    median_bandwidth_of(pooled.view(), max_points)
}

/// The configured bandwidth, resolving the median heuristic on `A ∪ B`.
pub fn resolve_bandwidth(
    cfg: &KernelConfig,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<f64> {
    match cfg.bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
        Bandwidth::Fixed(s) => Err(Error::invalid(
            "bandwidth",
            format!("must be positive, got {s}"),
        )),
        Bandwidth::Rule(BandwidthRule::MedianHeuristic) => {
            median_bandwidth_pooled(a, b, cfg.max_bandwidth_points)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdOutput {
    /// `sqrt(max(0, mmd2))`.
    pub mmd: f64,
    /// Signed squared estimate (the unbiased one may be negative).
    pub mmd2: f64,
    pub bandwidth: f64,
    pub estimator: MmdEstimator,
}

fn block_sum(k: &Array2<f64>, skip_diagonal: bool) -> f64 {
    let mut s = 0.0;
    for ((i, j), v) in k.indexed_iter() {
        if !(skip_diagonal && i == j) {
            s += v;
        }
    }
    s
}

/// Biased squared MMD: plain means of all three Gram blocks.
pub fn mmd_biased_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let kaa = block_sum(&gram(a, a, sigma), false) / (n * n);
    let kbb = block_sum(&gram(b, b, sigma), false) / (m * m);
    let kab = block_sum(&gram(a, b, sigma), false) / (n * m);
    kaa + kbb - 2.0 * kab
}

/// Unbiased squared MMD (u-statistic).
///
/// Within-sample blocks exclude their diagonals. For equal sizes the
/// cross block also excludes `i = j`, which is the one-sample u-statistic
/// over the paired points `(a_i, b_i)`; otherwise the cross block is the
/// full mean.
pub fn mmd_unbiased_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> Result<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    if n < 2 || m < 2 {
        return Err(Error::invalid(
            "points",
            "the unbiased estimator needs at least two points per sample",
        ));
    }
    let (nf, mf) = (n as f64, m as f64);
    let kaa = block_sum(&gram(a, a, sigma), true) / (nf * (nf - 1.0));
    let kbb = block_sum(&gram(b, b, sigma), true) / (mf * (mf - 1.0));
    let kab = if n == m {
        block_sum(&gram(a, b, sigma), true) / (nf * (nf - 1.0))
    } else {
        block_sum(&gram(a, b, sigma), false) / (nf * mf)
    };
    Ok(kaa + kbb - 2.0 * kab)
}

pub fn mmd(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &KernelConfig,
) -> Result<MmdOutput> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid(
            "points",
            "both samples need at least one row",
        ));
    }
    let sigma = resolve_bandwidth(cfg, a, b)?;
    let mmd2 = match cfg.mmd_estimator {
        MmdEstimator::Biased => mmd_biased_sq(a, b, sigma),
        MmdEstimator::Unbiased => mmd_unbiased_sq(a, b, sigma)?,
    };
    Ok(MmdOutput {
        mmd: mmd2.max(0.0).sqrt(),
        mmd2,
        bandwidth: sigma,
        estimator: cfg.mmd_estimator,
    })
}

/// `C_κ·sqrt(ln(2/δ)/n)`.
pub fn mmd_concentration(n: usize, c_kappa: f64, delta: f64) -> Result<f64> {
    check_open_unit("delta", delta)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(c_kappa >= 0.0) {
        return Err(Error::invalid("c_kappa", "must be non-negative"));
    }
    Ok(c_kappa * ((2.0 / delta).ln() / n as f64).sqrt())
}

/// A kernel ridge regression fit `ψ̂(u) = Σ_j α_j k(u_j, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrFit {
    pub support_points: Array2<f64>,
    pub alpha: Array1<f64>,
    pub lambda: f64,
    pub bandwidth: f64,
    /// `sqrt(αᵀKα)`.
    pub rkhs_norm: f64,
}

impl KrrFit {
    pub fn predict(&self, u: ArrayView2<'_, f64>) -> Array1<f64> {
        gram(u, self.support_points.view(), self.bandwidth).dot(&self.alpha)
    }
}

/// Solves `(K + mλI)α = t` by Cholesky and checks the normal-equation
/// residual against `1e-8·‖t‖`.
pub fn krr_fit(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    lambda: f64,
    bandwidth: f64,
) -> Result<KrrFit> {
    let m = features.nrows();
    if m == 0 {
        return Err(Error::invalid("features", "need at least one point"));
    }
    if targets.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: targets.len(),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth", "must be positive"));
    }
    let k = gram(features, features, bandwidth);
    let kn = DMatrix::from_fn(m, m, |i, j| k[[i, j]]);
    let mut reg = kn.clone();
    for i in 0..m {
        reg[(i, i)] += m as f64 * lambda;
    }
    let t = DVector::from_column_slice(targets);
    let alpha = reg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("kernel system is not positive definite".into()))?
        .solve(&t);
    let residual = (&reg * &alpha - &t).norm();
    if !(residual <= 1e-8 * t.norm()) {
        return Err(Error::Numeric(format!(
            "kernel solve residual {residual:e} exceeds tolerance"
        )));
    }
    let quad = alpha.dot(&(&kn * &alpha));
    Ok(KrrFit {
        support_points: features.to_owned(),
        alpha: Array1::from(alpha.as_slice().to_vec()),
        lambda,
        bandwidth,
        rkhs_norm: quad.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsEstimate {
    pub b_hat: f64,
    pub lambda: f64,
    pub bandwidth: f64,
    /// Mean held-out squared error per grid entry.
    pub cv_errors: Vec<f64>,
}

/// Selects `λ` by k-fold cross-validation (fold of point `i` is `i mod k`,
/// lowest grid index wins ties) and returns the norm of the refit on all
/// points. The bandwidth is resolved once on all points.
pub fn estimate_rkhs_norm_from_targets(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    cfg: &KernelConfig,
) -> Result<RkhsEstimate> {
    if cfg.lambda_grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "must not be empty"));
    }
    let m = features.nrows();
    if m < 10 {
        return Err(Error::invalid(
            "features",
            format!("need at least 10 points, got {m}"),
        ));
    }
    let folds = cfg.cv_folds.max(2).min(m);
    let sigma = resolve_bandwidth(cfg, features, features.slice(ndarray::s![0..0, ..]))?;
    let mut cv_errors = Vec::with_capacity(cfg.lambda_grid.len());
    for &lambda in &cfg.lambda_grid {
        let mut sse = 0.0;
        for fold in 0..folds {
            let train: Vec<usize> = (0..m).filter(|i| i % folds != fold).collect();
            let held: Vec<usize> = (0..m).filter(|i| i % folds == fold).collect();
            let xt = features.select(Axis(0), &train);
            let tt: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let fit = krr_fit(xt.view(), &tt, lambda, sigma)?;
            let pred = fit.predict(features.select(Axis(0), &held).view());
            for (p, &i) in pred.iter().zip(&held) {
                sse += (p - targets[i]) * (p - targets[i]);
            }
        }
        cv_errors.push(sse / m as f64);
    }
    let mut best = 0;
    for (k, e) in cv_errors.iter().enumerate() {
        if *e < cv_errors[best] {
            best = k;
        }
    }
    let lambda = cfg.lambda_grid[best];
    let fit = krr_fit(features, targets, lambda, sigma)?;
    Ok(RkhsEstimate {
        b_hat: fit.rkhs_norm,
        lambda,
        bandwidth: sigma,
        cv_errors,
    })
}

/// RKHS-norm scale of the loss surface of `model` on labeled points: fits
/// the per-point losses `ℓ(f(x_i), y_i)` as a function of the features.
pub fn estimate_rkhs_norm(
    model: &dyn Model,
    loss: &LossSpec,
    features: ArrayView2<'_, f64>,
    targets: &[Target],
    cfg: &KernelConfig,
) -> Result<RkhsEstimate> {
    if targets.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            got: targets.len(),
        });
    }
    let logits = model.logits_batch(features)?;
    let losses = logits
        .outer_iter()
        .zip(targets)
        .map(|(z, &t)| loss.value(z, t))
        .collect::<Result<Vec<f64>>>()?;
    estimate_rkhs_norm_from_targets(features, &losses, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
    }

    /// Independent double loop over index pairs.
    fn brute_unbiased(a: &Array2<f64>, b: &Array2<f64>, s: f64) -> f64 {
        let k = |x: ArrayView1<f64>, y: ArrayView1<f64>| {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
            (-d2 / (2.0 * s * s)).exp()
        };
        let (n, m) = (a.nrows(), b.nrows());
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        let mut cross_pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    xx += k(a.row(i), a.row(j));
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    yy += k(b.row(i), b.row(j));
                }
            }
        }
        for i in 0..n {
            for j in 0..m {
                if n != m || i != j {
                    xy += k(a.row(i), b.row(j));
                    cross_pairs += 1.0;
                }
            }
        }
        xx / (n * (n - 1)) as f64 + yy / (m * (m - 1)) as f64 - 2.0 * xy / cross_pairs
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_bandwidth(array![[0.0]].view(), array![[1.0]].view()).unwrap(),
            1.0
        );
        assert_eq!(
            median_bandwidth(array![[0.0], [1.0]].view(), array![[2.0]].view()).unwrap(),
            1.0
        );
        assert!(matches!(
            median_bandwidth(array![[1.0], [1.0]].view(), array![[1.0]].view()),
            Err(Error::Degenerate(_))
        ));
        // Mostly coincident points fall back to the nonzero distances.
        let s = median_bandwidth(array![[0.0], [0.0], [0.0]].view(), array![[2.0]].view()).unwrap();
        assert_eq!(s, 2.0);
    }

    #[test]
    fn mmd_examples() {
        let a = cloud(20, 2, 1);
        let cfg = KernelConfig::default();
        assert_eq!(mmd(a.view(), a.view(), &cfg).unwrap().mmd, 0.0);
        let p = array![[-1.0], [1.0]];
        for s in [0.1, 1.0, 7.0] {
            let cfg = KernelConfig {
                bandwidth: Bandwidth::Fixed(s),
                mmd_estimator: MmdEstimator::Unbiased,
                ..Default::default()
            };
            assert_eq!(mmd(p.view(), p.view(), &cfg).unwrap().mmd2, 0.0);
        }
        let a = cloud(5, 3, 2);
        let b = cloud(5, 3, 3);
        assert!(
            (mmd_unbiased_sq(a.view(), b.view(), 1.3).unwrap() - brute_unbiased(&a, &b, 1.3)).abs()
                < 1e-10
        );
        assert!(mmd_unbiased_sq(array![[0.0]].view(), b.view(), 1.0).is_err());
    }

    #[test]
    fn unbiased_matches_brute_force_on_all_small_sizes() {
        for n in 2..=8 {
            for m in 2..=8 {
                let a = cloud(n, 2, (n * 10 + m) as u64);
                let b = cloud(m, 2, (n * 10 + m + 500) as u64);
                let got = mmd_unbiased_sq(a.view(), b.view(), 0.9).unwrap();
                assert!((got - brute_unbiased(&a, &b, 0.9)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn concentration_examples() {
        let v = mmd_concentration(100, 1.0, 0.05).unwrap();
        assert!((v - (40f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.19214).abs() < 1e-4);
        assert_eq!(mmd_concentration(100, 0.0, 0.05).unwrap(), 0.0);
        assert!((mmd_concentration(400, 1.0, 0.05).unwrap() - v / 2.0).abs() < 1e-15);
        assert!(mmd_concentration(100, 1.0, 0.0).is_err());
    }

    #[test]
    fn krr_examples() {
        let x = array![[0.3, 0.4]];
        let fit = krr_fit(x.view(), &[2.5], 0.25, 1.0).unwrap();
        assert!((fit.alpha[0] - 2.5 / 1.25).abs() < 1e-15);
        assert!((fit.rkhs_norm - 2.5 / 1.25).abs() < 1e-15);

        let x = cloud(30, 2, 4);
        let fit = krr_fit(x.view(), &[0.0; 30], 0.1, 1.0).unwrap();
        assert!(fit.alpha.iter().all(|&a| a == 0.0) && fit.rkhs_norm == 0.0);

        let t: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let fit = krr_fit(x.view(), &t, 1e6, 1.0).unwrap();
        assert!(fit.rkhs_norm < 1e-4);
    }

    #[test]
    fn rkhs_estimate_examples() {
        let x = cloud(60, 2, 8);
        let cfg = KernelConfig::default();
        let est = estimate_rkhs_norm_from_targets(x.view(), &[0.7; 60], &cfg).unwrap();
        assert!(est.b_hat.is_finite());
        let fit = krr_fit(x.view(), &[0.7; 60], est.lambda, est.bandwidth).unwrap();
        for p in fit.predict(x.view()).iter() {
            assert!((p - 0.7).abs() / 0.7 < 0.05, "{p}");
        }
        assert_eq!(
            estimate_rkhs_norm_from_targets(x.view(), &[0.0; 60], &cfg)
                .unwrap()
                .b_hat,
            0.0
        );

        let t: Vec<f64> = (0..60).map(|i| (i as f64 * 0.3).cos()).collect();
        let single = KernelConfig {
            lambda_grid: vec![1.0],
            ..Default::default()
        };
        let est = estimate_rkhs_norm_from_targets(x.view(), &t, &single).unwrap();
        let direct = krr_fit(x.view(), &t, 1.0, est.bandwidth).unwrap();
        assert_eq!(est.b_hat, direct.rkhs_norm);

        let empty = KernelConfig {
            lambda_grid: vec![],
            ..Default::default()
        };
        assert!(estimate_rkhs_norm_from_targets(x.view(), &t, &empty).is_err());
    }

    #[test]
    fn translation_response_is_monotone() {
        let a = cloud(80, 2, 21);
        let cfg = KernelConfig {
            bandwidth: Bandwidth::Fixed(1.0),
            ..Default::default()
        };
        let mut prev = -1.0;
        for t in [0.0, 0.5, 1.0, 2.0] {
            let mut b = cloud(80, 2, 22);
            b.column_mut(0).mapv_inplace(|v| v + t);
            let v = mmd(a.view(), b.view(), &cfg).unwrap().mmd;
            assert!(v > prev);
            prev = v;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gram_is_valid(n in 1usize..25, seed in 0u64..1000, s in 0.2f64..3.0, lambda in 1e-3f64..1.0) {
            let x = cloud(n, 3, seed);
            let k = gram(x.view(), x.view(), s);
            for i in 0..n {
                prop_assert_eq!(k[[i, i]], 1.0);
                for j in 0..n {
                    prop_assert_eq!(k[[i, j]], k[[j, i]]);
                    prop_assert!(k[[i, j]] > 0.0 && k[[i, j]] <= 1.0);
                }
            }
            let mut reg = DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
            for i in 0..n {
                reg[(i, i)] += n as f64 * lambda;
            }
            let min_eig = reg.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= n as f64 * lambda * (1.0 - 1e-9));
        }

        #[test]
        fn krr_norm_non_increasing_in_lambda(n in 3usize..30, seed in 0u64..1000) {
            let x = cloud(n, 2, seed);
            let t: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.7 + seed as f64).sin()).collect();
            let mut prev = f64::INFINITY;
            for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
                let fit = krr_fit(x.view(), &t, lambda, 1.0).unwrap();
                let k = gram(x.view(), x.view(), 1.0);
                let r = &k.dot(&fit.alpha) + &(&fit.alpha * (n as f64 * lambda));
                let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                let res = r.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(res <= 1e-8 * tn.max(f64::MIN_POSITIVE));
                prop_assert!(fit.rkhs_norm <= prev * (1.0 + 1e-9));
                prev = fit.rkhs_norm;
            }
        }
    }
}
