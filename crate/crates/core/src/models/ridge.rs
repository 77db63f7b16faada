use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population ridge regression under a Gaussian mean shift.
///
/// Source inputs are `N(0, I)`, target inputs `N(μ, I)`, labels
/// `y = w*ᵀx + ε` with noise variance `σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeWorld {
    pub w_star: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
}

impl RidgeWorld {
    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    fn check(&self) -> Result<()> {
        if self.mu.len() != self.w_star.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w_star.len(),
                got: self.mu.len(),
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        Ok(())
    }
}

/// `w_Q = w*/(1+λ)` and `w_Q̃ = ((1+λ)I + μμᵀ)⁻¹(I + μμᵀ)w*`, the latter by
/// a direct Cholesky solve.
pub fn ridge_population_weights(world: &RidgeWorld) -> Result<(Vec<f64>, Vec<f64>)> {
    world.check()?;
    if world.lambda <= 0.0 {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let d = world.dim();
    let w = DVector::from_column_slice(&world.w_star);
    let mu = DVector::from_column_slice(&world.mu);
    let outer = &mu * mu.transpose();
    let lhs = DMatrix::identity(d, d) * (1.0 + world.lambda) + &outer;
    let rhs = (DMatrix::identity(d, d) + &outer) * &w;
    let w_qt = lhs
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?
        .solve(&rhs);
    let w_q = w / (1.0 + world.lambda);
    Ok((w_q.as_slice().to_vec(), w_qt.as_slice().to_vec()))
}

/// `Δw = λ(μᵀw*) / ((1+λ)(1+λ+‖μ‖²)) · μ`.
pub fn ridge_delta_w(world: &RidgeWorld) -> Result<Vec<f64>> {
    world.check()?;
    let l = world.lambda;
    let mu_w: f64 = world.mu.iter().zip(&world.w_star).map(|(a, b)| a * b).sum();
    let mu2: f64 = world.mu.iter().map(|a| a * a).sum();
    let s = l * mu_w / ((1.0 + l) * (1.0 + l + mu2));
    Ok(world.mu.iter().map(|m| s * m).collect())
}

/// Source risk `R_P(w) = ‖w − w*‖² + σ²`.
pub fn ridge_source_risk(world: &RidgeWorld, w: &[f64]) -> Result<f64> {
    if w.len() != world.dim() {
        return Err(Error::DimensionMismatch {
            expected: world.dim(),
            got: w.len(),
        });
    }
    Ok(w.iter()
        .zip(&world.w_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        + world.sigma2)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("sweep", "a slope needs at least two points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate(
            "log-log fit needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("sweep", "sweep points must differ"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeCheckConfig {
    pub dim: usize,
    /// Drawn from `N(0, I)` with `seed` when empty.
    pub w_star: Vec<f64>,
    /// Shift direction, normalized before use; drawn with `seed` when empty.
    pub direction: Vec<f64>,
    /// `‖μ‖ = 2^k` for each exponent `k`.
    pub exponents: Vec<i32>,
    pub lambda: f64,
    pub sigma2: f64,
    pub expected_delta_r_slope: f64,
    pub expected_delta_w_slope: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RidgeCheckConfig {
    fn default() -> Self {
        RidgeCheckConfig {
            dim: 4,
            w_star: Vec::new(),
            direction: Vec::new(),
            exponents: (-6..=-1).collect(),
            lambda: 1.0,
            sigma2: 0.0,
            expected_delta_r_slope: 1.0,
            expected_delta_w_slope: 2.0,
            tolerance: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub quantity: String,
    pub expected: f64,
    pub tolerance: f64,
    pub slope: Option<f64>,
    pub status: CheckStatus,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeScalingReport {
    pub w_star: Vec<f64>,
    pub direction: Vec<f64>,
    pub shift_norms: Vec<f64>,
    pub delta_r: Vec<f64>,
    pub delta_w_norm: Vec<f64>,
    /// Log-log slope of `|ΔR|` against `‖Δw‖`; informational, unset when
    /// either sequence touches zero.
    pub delta_r_vs_delta_w_slope: Option<f64>,
    pub checks: Vec<SlopeCheck>,
}

impl RidgeScalingReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

fn slope_check(
    quantity: &str,
    xs: &[f64],
    ys: &[f64],
    expected: f64,
    tolerance: f64,
) -> Result<SlopeCheck> {
    let mut check = SlopeCheck {
        quantity: quantity.into(),
        expected,
        tolerance,
        slope: None,
        status: CheckStatus::Skipped,
        note: None,
    };
    if ys.iter().all(|&v| v == 0.0) {
        check.note = Some("identically zero over the sweep".into());
        return Ok(check);
    }
    let s = loglog_slope(xs, ys)?;
    check.slope = Some(s);
    check.status = if (s - expected).abs() <= tolerance {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(check)
}

/// Sweeps `‖μ‖` over `2^k·μ̂` and fits log-log slopes of `|ΔR|` and `‖Δw‖`.
/// A quantity that vanishes over the whole sweep (shift orthogonal to `w*`)
/// is skipped.
pub fn ridge_scaling_check(cfg: &RidgeCheckConfig) -> Result<RidgeScalingReport> {
    if cfg.exponents.len() < 2 {
        return Err(Error::invalid(
            "exponents",
            "a slope needs at least two sweep points",
        ));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        if v.is_empty() {
            (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            v.to_vec()
        }
    };
    let w_star = draw(&cfg.w_star, &mut rng);
    let raw = draw(&cfg.direction, &mut rng);
    if raw.len() != w_star.len() {
        return Err(Error::DimensionMismatch {
            expected: w_star.len(),
            got: raw.len(),
        });
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("direction", "must be non-zero"));
    }
    let direction: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let mut shift_norms = Vec::new();
    let mut delta_r = Vec::new();
    let mut delta_w_norm = Vec::new();
    for &k in &cfg.exponents {
        let t = 2f64.powi(k);
        let world = RidgeWorld {
            w_star: w_star.clone(),
            mu: direction.iter().map(|v| v * t).collect(),
            lambda: cfg.lambda,
            sigma2: cfg.sigma2,
        };
        let (wq, wqt) = ridge_population_weights(&world)?;
        shift_norms.push(t);
        delta_r.push((ridge_source_risk(&world, &wqt)? - ridge_source_risk(&world, &wq)?).abs());
        delta_w_norm.push(
            ridge_delta_w(&world)?
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
        );
    }
    let checks = vec![
        slope_check(
            "delta_r",
            &shift_norms,
            &delta_r,
            cfg.expected_delta_r_slope,
            cfg.tolerance,
        )?,
        slope_check(
            "delta_w",
            &shift_norms,
            &delta_w_norm,
            cfg.expected_delta_w_slope,
            cfg.tolerance,
        )?,
    ];
    let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0);
    let delta_r_vs_delta_w_slope = if positive(&delta_r) && positive(&delta_w_norm) {
        Some(loglog_slope(&delta_w_norm, &delta_r)?)
    } else {
        None
    };
    Ok(RidgeScalingReport {
        w_star,
        direction,
        shift_norms,
        delta_r,
        delta_w_norm,
        delta_r_vs_delta_w_slope,
        checks,
    })
}
