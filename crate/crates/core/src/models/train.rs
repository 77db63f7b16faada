use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::predictor::{LossSpec, Predictor, PredictorKind};
use crate::datasets::Target;
use crate::error::{Error, Result};

/// Full-batch gradient descent with heavy-ball momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub momentum: f64,
    /// Weight penalty `λ‖W‖²`; biases are not penalized.
    pub l2_penalty: f64,
    /// Seeds parameter initialization in [`fit`].
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            epochs: 200,
            momentum: 0.9,
            l2_penalty: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::invalid("l2_penalty", "must be non-negative"));
        }
        Ok(())
    }
}

struct Grad {
    objective: f64,
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Mean loss plus penalty, and its parameter gradient.
fn objective_and_grad(
    p: &Predictor,
    x: ArrayView2<'_, f64>,
    targets: &[Target],
    loss: &LossSpec,
    l2: f64,
) -> Result<Grad> {
    let n = x.nrows() as f64;
    let (z, h) = p.raw_batch(x);
    let b = p.logit_clip;
    let mut g = Array2::zeros(z.raw_dim());
    let mut total = 0.0;
    for (i, (zr, &t)) in z.outer_iter().zip(targets).enumerate() {
        let clipped = zr.mapv(|v| v.clamp(-b, b));
        total += loss.value(clipped.view(), t)?;
        let mut gi = loss.logit_gradient(clipped.view(), t)?;
        for (gk, zk) in gi.iter_mut().zip(zr) {
            if zk.abs() >= b {
                *gk = 0.0;
            }
        }
        g.row_mut(i).assign(&(gi / n));
    }
    let mut objective = total / n;
    for l in &p.layers {
        objective += l2 * l.weights.iter().map(|w| w * w).sum::<f64>();
    }

    let layers = match p.kind {
        PredictorKind::Mlp => {
            let h = h.expect("mlp keeps activations");
            let (l1, l2_) = (&p.layers[0], &p.layers[1]);
            let gw2 = g.t().dot(&h) + &(&l2_.weights * (2.0 * l2));
            let gb2 = g.sum_axis(Axis(0));
            let dh = g.dot(&l2_.weights);
            let da = dh * &h.mapv(|v| 1.0 - v * v);
            let gw1 = da.t().dot(&x) + &(&l1.weights * (2.0 * l2));
            let gb1 = da.sum_axis(Axis(0));
            vec![(gw1, gb1), (gw2, gb2)]
        }
        _ => {
            let l = &p.layers[0];
            let gw = g.t().dot(&x) + &(&l.weights * (2.0 * l2));
            vec![(gw, g.sum_axis(Axis(0)))]
        }
    };
    Ok(Grad { objective, layers })
}

/// Trains a copy of `p`; see [`train_traced`].
pub fn train(
    p: &Predictor,
    x: ArrayView2<'_, f64>,
    targets: &[Target],
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<Predictor> {
    train_traced(p, x, targets, loss, cfg).map(|(p, _)| p)
}

/// Trains a copy of `p` and returns the objective before every epoch's
/// update.
///
/// The objective is the mean clipped loss plus `λ·Σ‖W‖²`. A non-finite
/// objective stops training with [`Error::TrainingDiverged`].
pub fn train_traced(
    p: &Predictor,
    x: ArrayView2<'_, f64>,
    targets: &[Target],
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(Predictor, Vec<f64>)> {
    cfg.validate()?;
    if x.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: targets.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let expected = p.layers[0].weights.ncols();
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    let mut p = p.clone();
    let mut velocity: Vec<(Array2<f64>, Array1<f64>)> = p
        .layers
        .iter()
        .map(|l| {
            (
                Array2::zeros(l.weights.raw_dim()),
                Array1::zeros(l.bias.len()),
            )
        })
        .collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let grad = objective_and_grad(&p, x, targets, loss, cfg.l2_penalty)?;
        if !grad.objective.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(grad.objective);
        for ((layer, vel), (gw, gb)) in p.layers.iter_mut().zip(&mut velocity).zip(grad.layers) {
            vel.0 = &vel.0 * cfg.momentum - &(gw * cfg.learning_rate);
            vel.1 = &vel.1 * cfg.momentum - &(gb * cfg.learning_rate);
            layer.weights += &vel.0;
            layer.bias += &vel.1;
        }
        if p.layers.iter().any(|l| {
            l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
        }) {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    Ok((p, history))
}

/// Seeded initialization followed by [`train`].
pub fn fit(
    kind: PredictorKind,
    x: ArrayView2<'_, f64>,
    targets: &[Target],
    outputs: usize,
    hidden: usize,
    logit_clip: f64,
    cfg: &TrainConfig,
) -> Result<Predictor> {
    let p0 = Predictor::init(kind, x.ncols(), outputs, hidden, logit_clip, cfg.seed)?;
    let loss = LossSpec::for_predictor(&p0);
    train(&p0, x, targets, &loss, cfg)
}
