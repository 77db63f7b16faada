//! Gradient-quantile Lipschitz proxies and their DKW confidence band.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::datasets::Target;
use crate::error::{check_open_unit, Error, Result};
use crate::models::{argmax, LossSpec, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    GroundTruth,
    PseudoLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientNorm {
    L1,
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    pub q: f64,
    pub eta: f64,
    pub norm: GradientNorm,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            q: 0.99,
            eta: 0.05,
            norm: GradientNorm::L2,
        }
    }
}

/// Where the labels for the gradient evaluation come from.
#[derive(Clone, Copy)]
pub enum Labels<'a> {
    GroundTruth(&'a [Target]),
    /// Argmax of this (source) model on each input.
    PseudoFrom(&'a dyn Model),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub q: f64,
    pub value: f64,
    pub sample_size: usize,
    pub dkw_epsilon: f64,
    pub label_mode: LabelMode,
    /// Largest observed gradient norm.
    pub max_norm: f64,
}

/// `sqrt(ln(2/η)/(2m))`.
pub fn dkw_band(m: usize, eta: f64) -> Result<f64> {
    check_open_unit("eta", eta)?;
    if m == 0 {
        return Err(Error::invalid("m", "must be positive"));
    }
    Ok(((2.0 / eta).ln() / (2.0 * m as f64)).sqrt())
}

/// 1-based rank `ceil(q·m)`, snapping products within 1e-9 of an integer.
pub fn quantile_rank(q: f64, m: usize) -> usize {
    let x = q * m as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).clamp(1, m)
}

/// Order statistic at rank `ceil(q·m)` of `sample`.
pub fn upper_quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("sample", "must not be empty"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", format!("must lie in (0, 1), got {q}")));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite gradient norms"));
    Ok(s[quantile_rank(q, s.len()) - 1])
}

fn norm(v: &[f64], kind: GradientNorm) -> f64 {
    match kind {
        GradientNorm::L1 => v.iter().map(|x| x.abs()).sum(),
        GradientNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        GradientNorm::Linf => v.iter().fold(0.0, |a, x| a.max(x.abs())),
    }
}

/// Per-point input-gradient norms of the loss of `model`.
pub fn gradient_norms(
    model: &dyn Model,
    loss: &LossSpec,
    inputs: ArrayView2<'_, f64>,
    labels: Labels<'_>,
    kind: GradientNorm,
) -> Result<Vec<f64>> {
    if let Labels::GroundTruth(t) = labels {
        if t.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                got: t.len(),
            });
        }
    }
    inputs
        .outer_iter()
        .enumerate()
        .map(|(i, x)| {
            let target = match labels {
                Labels::GroundTruth(t) => t[i],
                Labels::PseudoFrom(src) => Target::Class(argmax(src.logits(x)?.view())),
            };
            let g = model.loss_input_gradient(loss, x, target)?;
            let v = norm(g.as_slice().expect("contiguous gradient"), kind);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!(
                    "non-finite gradient norm at row {i}"
                )))
            }
        })
        .collect()
}

/// `L̂^{(q)} = Quantile_q({‖∇_x ℓ(f(x_i), y_i)‖})` over the holdout.
pub fn lipschitz_proxy(
    model: &dyn Model,
    loss: &LossSpec,
    inputs: ArrayView2<'_, f64>,
    labels: Labels<'_>,
    cfg: &LipschitzConfig,
) -> Result<LipschitzEstimate> {
    if inputs.nrows() == 0 {
        return Err(Error::invalid("holdout", "must not be empty"));
    }
    let norms = gradient_norms(model, loss, inputs, labels, cfg.norm)?;
    let value = upper_quantile(&norms, cfg.q)?;
    Ok(LipschitzEstimate {
        q: cfg.q,
        value,
        sample_size: norms.len(),
        dkw_epsilon: dkw_band(norms.len(), cfg.eta)?,
        label_mode: match labels {
            Labels::GroundTruth(_) => LabelMode::GroundTruth,
            Labels::PseudoFrom(_) => LabelMode::PseudoLabel,
        },
        max_norm: norms.iter().fold(0.0, |a, &b| a.max(b)),
    })
}
