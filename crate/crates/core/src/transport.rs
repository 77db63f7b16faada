//! Debiased Sinkhorn divergence between uniform point clouds, an exact
//! assignment oracle for tiny instances, and the population residual of
//! empirical-measure concentration.
//!
//! The solver follows the symmetric ("Jacobi averaged") Sinkhorn scheme:
//! both dual potentials are updated from the previous pair and averaged with
//! their old values, and a final non-averaged half step extrapolates the
//! result. The self-transport terms use a single potential each. All
//! reductions run in index order, which makes the divergence bitwise
//! symmetric in its arguments and exactly zero for identical clouds.
//!
//! Iterations run in the scaling (kernel) domain with periodic absorption of
//! the scalings into the log potentials. Instances whose stabilized kernel
//! under- or overflows, and tiny instances, run in the log domain.

use itertools::Itertools;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub epsilon: f64,
    pub iterations: usize,
    /// Ground cost `‖x − y‖^p`.
    pub cost_exponent: f64,
    /// Feature-map scale factor multiplying the distance in the bound.
    pub c_h: f64,
    /// Clouds larger than this are subsampled to this many rows.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            epsilon: 0.1,
            iterations: 200,
            cost_exponent: 2.0,
            c_h: 1.0,
            max_points: 5000,
            seed: 0,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if !(self.cost_exponent > 0.0) {
            return Err(Error::invalid("cost_exponent", "must be positive"));
        }
        if !(self.c_h > 0.0) {
            return Err(Error::invalid("c_h", "must be positive"));
        }
        if self.max_points == 0 {
            return Err(Error::invalid("max_points", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub c_x: f64,
    pub c_xt: f64,
    pub delta: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            c_x: 1.0,
            c_xt: 1.0,
            delta: 0.05,
        }
    }
}

/// Divergence value plus solver bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOutput {
    /// Clamped divergence (`≥ 0`).
    pub value: f64,
    /// Value before clamping tiny negatives.
    pub raw_value: f64,
    /// Largest potential change of the final extrapolation step, over all
    /// three transport problems.
    pub convergence_gap: f64,
    pub rows_a: usize,
    pub rows_b: usize,
    pub log_domain: bool,
}

const NEGATIVE_TOLERANCE: f64 = -1e-8;
// exp(50) keeps scalings far from overflow between absorptions.
const ABSORB_AT: f64 = 50.0;
// Below this many kernel entries the log domain is cheap enough.
const LOG_DOMAIN_ENTRIES: usize = 4096;

pub fn sinkhorn_divergence(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &TransportConfig,
) -> Result<f64> {
    sinkhorn_divergence_detailed(a, b, cfg).map(|o| o.value)
}

/// `S_ε(a, b) = OT_ε(a, b) − ½OT_ε(a, a) − ½OT_ε(b, b)` for uniform measures
/// on the rows of `a` and `b`.
pub fn sinkhorn_divergence_detailed(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &TransportConfig,
) -> Result<SinkhornOutput> {
    cfg.validate()?;
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid(
            "points",
            "both clouds need at least one row",
        ));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite point coordinate".into()));
    }
    let a = subsample(a, cfg);
    let b = subsample(b, cfg);

    let ab = solve(&scaled_cost(a.view(), b.view(), cfg), false, cfg.iterations);
    let aa = solve(&scaled_cost(a.view(), a.view(), cfg), true, cfg.iterations);
    let bb = solve(&scaled_cost(b.view(), b.view(), cfg), true, cfg.iterations);

    let cross = mean(&ab.f) + mean(&ab.g);
    let selves = mean(&aa.f) + mean(&bb.f);
    let raw = cfg.epsilon * (cross - selves);
    if !raw.is_finite() {
        return Err(Error::Numeric(
            "Sinkhorn iteration produced a non-finite value".into(),
        ));
    }
    if raw < NEGATIVE_TOLERANCE {
        return Err(Error::Numeric(format!(
            "Sinkhorn divergence {raw} is negative beyond tolerance"
        )));
    }
    let gap = cfg.epsilon * ab.gap.max(aa.gap).max(bb.gap);
    Ok(SinkhornOutput {
        value: raw.max(0.0),
        raw_value: raw,
        convergence_gap: gap,
        rows_a: a.nrows(),
        rows_b: b.nrows(),
        log_domain: ab.log_domain || aa.log_domain || bb.log_domain,
    })
}

/// `ε·(⟨α, f⟩ + ⟨β, g⟩)` for the cross problem; no subsampling.
pub(crate) fn cross_transport(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &TransportConfig,
) -> f64 {
    let p = solve(&scaled_cost(a, b, cfg), false, cfg.iterations);
    cfg.epsilon * (mean(&p.f) + mean(&p.g))
}

/// `½·OT_ε(x, x)`; no subsampling.
pub(crate) fn half_self_transport(x: ArrayView2<'_, f64>, cfg: &TransportConfig) -> f64 {
    let p = solve(&scaled_cost(x, x, cfg), true, cfg.iterations);
    cfg.epsilon * mean(&p.f)
}

fn subsample(x: ArrayView2<'_, f64>, cfg: &TransportConfig) -> Array2<f64> {
    let n = x.nrows();
    if n <= cfg.max_points {
        return x.to_owned();
    }
    // Seeded by the row count so the choice does not depend on argument order.
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx = sample(&mut rng, n, cfg.max_points).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

fn ground_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let mut s = 0.0;
    for (u, v) in x.iter().zip(y) {
        let d = u - v;
        s += d * d;
    }
    if p == 2.0 {
        s
    } else {
        s.sqrt().powf(p)
    }
}

/// `C_ij / ε`, row-major.
fn scaled_cost(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &TransportConfig,
) -> Array2<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let mut c = Array2::zeros((n, m));
    c.as_slice_mut()
        .unwrap()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, row)| {
            let ai = a.row(i);
            let ai = ai.as_slice().unwrap();
            for (j, out) in row.iter_mut().enumerate() {
                *out =
                    ground_cost(ai, b.row(j).as_slice().unwrap(), cfg.cost_exponent) / cfg.epsilon;
            }
        });
    c
}

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

/// Dimensionless potentials `f/ε`, `g/ε` of one transport problem.
struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
    gap: f64,
    log_domain: bool,
}

fn solve(c: &Array2<f64>, symmetric: bool, iterations: usize) -> Potentials {
    if c.len() > LOG_DOMAIN_ENTRIES {
        if let Some(p) = solve_scaling(c, symmetric, iterations) {
            return p;
        }
    }
    solve_log(c, symmetric, iterations)
}

/// `−ln Σ_j w_j exp(h_j − c_ij)` for every row `i`, with `lw = ln w`.
fn softmin_rows(c: &Array2<f64>, lw: f64, h: &[f64]) -> Vec<f64> {
    c.outer_iter()
        .map(|row| {
            let mut m = f64::NEG_INFINITY;
            for (j, &cij) in row.iter().enumerate() {
                m = m.max((lw + h[j]) - cij);
            }
            let mut s = 0.0;
            for (j, &cij) in row.iter().enumerate() {
                s += (((lw + h[j]) - cij) - m).exp();
            }
            -(m + s.ln())
        })
        .collect()
}

/// Column counterpart of [`softmin_rows`]; same operation order as the row
/// version applied to the transposed cost.
fn softmin_cols(c: &Array2<f64>, lw: f64, h: &[f64]) -> Vec<f64> {
    let (n, m) = c.dim();
    (0..m)
        .map(|j| {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                mx = mx.max((lw + h[i]) - c[[i, j]]);
            }
            let mut s = 0.0;
            for i in 0..n {
                s += (((lw + h[i]) - c[[i, j]]) - mx).exp();
            }
            -(mx + s.ln())
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Ratio between consecutive regularization levels of the warm start.
const ANNEAL_FACTOR: f64 = 0.5;
/// Iterations spent at each warm-start level.
const ANNEAL_STEPS: usize = 10;

/// Damped log-domain updates on the cost `c` (already divided by ε).
fn log_iterations(
    c: &Array2<f64>,
    symmetric: bool,
    iterations: usize,
    f: &mut [f64],
    g: &mut [f64],
) {
    let (n, m) = c.dim();
    let la = -(n as f64).ln();
    let lb = -(m as f64).ln();
    for _ in 0..iterations {
        if symmetric {
            let ft = softmin_rows(c, lb, f);
            f.iter_mut().zip(&ft).for_each(|(x, t)| *x = 0.5 * (*x + t));
        } else {
            let ft = softmin_rows(c, lb, g);
            let gt = softmin_cols(c, la, f);
            f.iter_mut().zip(&ft).for_each(|(x, t)| *x = 0.5 * (*x + t));
            g.iter_mut().zip(&gt).for_each(|(x, t)| *x = 0.5 * (*x + t));
        }
    }
}

/// `iterations` counts steps at the target ε. When the scaled cost exceeds
/// one, a geometric ε-scaling warm start runs first: the regularization
/// starts at the largest cost and halves every `ANNEAL_STEPS` iterations,
/// carrying the potentials across levels. Without it small ε needs on the
/// order of `max C/ε` iterations.
fn solve_log(c: &Array2<f64>, symmetric: bool, iterations: usize) -> Potentials {
    let (n, m) = c.dim();
    let la = -(n as f64).ln();
    let lb = -(m as f64).ln();
    let c_max = c.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut levels = Vec::new();
    let mut level = c_max;
    while level > 1.0 {
        levels.push(level);
        level *= ANNEAL_FACTOR;
    }
    let start = levels.first().copied().unwrap_or(1.0);
    let first = c.mapv(|v| v / start);
    let mut f = softmin_rows(&first, lb, &vec![0.0; m]);
    let mut g = if symmetric {
        vec![0.0; m]
    } else {
        softmin_cols(&first, la, &vec![0.0; n])
    };
    let mut prev = start;
    for &level in &levels {
        let ratio = prev / level;
        f.iter_mut().chain(g.iter_mut()).for_each(|x| *x *= ratio);
        log_iterations(
            &c.mapv(|v| v / level),
            symmetric,
            ANNEAL_STEPS,
            &mut f,
            &mut g,
        );
        prev = level;
    }
    f.iter_mut().chain(g.iter_mut()).for_each(|x| *x *= prev);
    log_iterations(c, symmetric, iterations, &mut f, &mut g);
    if symmetric {
        let ft = softmin_rows(c, lb, &f);
        let gap = max_abs_diff(&ft, &f);
        Potentials {
            g: ft.clone(),
            f: ft,
            gap,
            log_domain: true,
        }
    } else {
        let ft = softmin_rows(c, lb, &g);
        let gt = softmin_cols(c, la, &f);
        let gap = max_abs_diff(&ft, &f).max(max_abs_diff(&gt, &g));
        Potentials {
            f: ft,
            g: gt,
            gap,
            log_domain: true,
        }
    }
}

/// Stabilized kernel `exp(F0_i + G0_j − c_ij)`; `None` when any entry is
/// non-finite.
fn stabilized_kernel(c: &Array2<f64>, f0: &[f64], g0: &[f64]) -> Option<Array2<f64>> {
    let m = c.ncols();
    let mut k = Array2::zeros(c.raw_dim());
    let ok = k
        .as_slice_mut()
        .unwrap()
        .par_chunks_mut(m)
        .zip(c.as_slice().unwrap().par_chunks(m))
        .enumerate()
        .map(|(i, (krow, crow))| {
            let mut finite = true;
            for j in 0..m {
                let v = ((f0[i] + g0[j]) - crow[j]).exp();
                finite &= v.is_finite();
                krow[j] = v;
            }
            finite
        })
        .reduce(|| true, |a, b| a && b);
    ok.then_some(k)
}

/// `ln u_i ← −ln Σ_j K_ij w_j` in row order.
fn row_step(k: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    k.outer_iter()
        .map(|row| {
            let mut s = 0.0;
            for (kij, wj) in row.iter().zip(w) {
                s += kij * wj;
            }
            -s.ln()
        })
        .collect()
}

/// `ln v_j ← −ln Σ_i K_ij w_i`, accumulating over `i` in order.
fn col_step(k: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; k.ncols()];
    for (row, wi) in k.outer_iter().zip(w) {
        for (sj, kij) in s.iter_mut().zip(row) {
            *sj += kij * wi;
        }
    }
    s.into_iter().map(|x| -x.ln()).collect()
}

fn weights(weight: f64, log_scaling: &[f64]) -> Vec<f64> {
    log_scaling.iter().map(|x| weight * x.exp()).collect()
}

fn solve_scaling(c: &Array2<f64>, symmetric: bool, iterations: usize) -> Option<Potentials> {
    let (n, m) = c.dim();
    let (wa, wb) = (1.0 / n as f64, 1.0 / m as f64);
    let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
    let mut f0 = softmin_rows(c, lb, &vec![0.0; m]);
    let mut g0 = if symmetric {
        f0.clone()
    } else {
        softmin_cols(c, la, &vec![0.0; n])
    };
    let mut k = stabilized_kernel(c, &f0, &g0)?;
    // Log-scalings on top of the absorbed potentials.
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; m];
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());

    for _ in 0..iterations {
        let big = a
            .iter()
            .chain(if symmetric { &[][..] } else { &b[..] })
            .any(|x: &f64| x.abs() > ABSORB_AT);
        if big {
            f0.iter_mut().zip(&a).for_each(|(x, d)| *x += d);
            a.iter_mut().for_each(|x| *x = 0.0);
            if symmetric {
                g0 = f0.clone();
            } else {
                g0.iter_mut().zip(&b).for_each(|(x, d)| *x += d);
                b.iter_mut().for_each(|x| *x = 0.0);
            }
            k = stabilized_kernel(c, &f0, &g0)?;
        }
        if symmetric {
            let at = row_step(&k, &weights(wa, &a));
            if !finite(&at) {
                return None;
            }
            a.iter_mut().zip(&at).for_each(|(x, t)| *x = 0.5 * (*x + t));
        } else {
            let at = row_step(&k, &weights(wb, &b));
            let bt = col_step(&k, &weights(wa, &a));
            if !finite(&at) || !finite(&bt) {
                return None;
            }
            a.iter_mut().zip(&at).for_each(|(x, t)| *x = 0.5 * (*x + t));
            b.iter_mut().zip(&bt).for_each(|(x, t)| *x = 0.5 * (*x + t));
        }
    }

    if symmetric {
        let at = row_step(&k, &weights(wa, &a));
        if !finite(&at) {
            return None;
        }
        let gap = max_abs_diff(&at, &a);
        let f: Vec<f64> = f0.iter().zip(&at).map(|(x, d)| x + d).collect();
        Some(Potentials {
            g: f.clone(),
            f,
            gap,
            log_domain: false,
        })
    } else {
        let at = row_step(&k, &weights(wb, &b));
        let bt = col_step(&k, &weights(wa, &a));
        if !finite(&at) || !finite(&bt) {
            return None;
        }
        let gap = max_abs_diff(&at, &a).max(max_abs_diff(&bt, &b));
        let f = f0.iter().zip(&at).map(|(x, d)| x + d).collect();
        let g = g0.iter().zip(&bt).map(|(x, d)| x + d).collect();
        Some(Potentials {
            f,
            g,
            gap,
            log_domain: false,
        })
    }
}

/// Exact optimal transport cost between two equal-size uniform clouds:
/// the minimum over all assignments of the mean `‖a_i − b_σ(i)‖^p`.
pub fn exact_w1_small(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cost_exponent: f64,
) -> Result<f64> {
    let n = a.nrows();
    if n != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    if n == 0 || n > 10 {
        return Err(Error::invalid(
            "points",
            format!("exact oracle supports 1 to 10 points, got {n}"),
        ));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let cost: Vec<Vec<f64>> = a
        .outer_iter()
        .map(|ai| {
            b.outer_iter()
                .map(|bj| ground_cost(&ai.to_vec(), &bj.to_vec(), cost_exponent))
                .collect()
        })
        .collect();
    let best = (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| cost[i][j])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// `C_X·(ln(4/δ)/n)^{1/α_d}` with `α_d = max(d, 2)`.
pub fn population_residual(n: usize, dim: usize, c_x: f64, delta: f64) -> Result<f64> {
    check_open_unit("delta", delta)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if !(c_x >= 0.0) {
        return Err(Error::invalid("c_x", "must be non-negative"));
    }
    let alpha = dim.max(2) as f64;
    Ok(c_x * ((4.0 / delta).ln() / n as f64).powf(1.0 / alpha))
}

/// Mean ℓ2 distance between corresponding rows.
pub fn mean_row_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows() * a.ncols(),
            got: b.nrows() * b.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::Degenerate("no rows".into()));
    }
    let d: Array1<f64> = (&a - &b).map_axis(Axis(1), |r| r.dot(&r).sqrt());
    Ok(d.sum() / a.nrows() as f64)
}
