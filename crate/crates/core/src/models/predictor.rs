use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Target;
use crate::error::{read_text, write_text, Error, Result};

pub const DEFAULT_LOGIT_CLIP: f64 = 10.0;
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    LogisticLinear,
    Mlp,
    RidgeLinear,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic-linear" => Ok(PredictorKind::LogisticLinear),
            "mlp" => Ok(PredictorKind::Mlp),
            "ridge-linear" => Ok(PredictorKind::RidgeLinear),
            other => Err(Error::invalid(
                "kind",
                format!("unknown predictor kind `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

/// A loss together with its bound `M` and logit-Lipschitz constant `L_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub m_bound: f64,
    pub l_ell: f64,
}

impl LossSpec {
    /// Cross-entropy on logits clipped to `[−clip, clip]`: `M = clip + ln C`,
    /// `L_ℓ = √2`.
    pub fn cross_entropy(clip: f64, class_count: usize) -> Self {
        LossSpec {
            kind: LossKind::CrossEntropy,
            m_bound: clip + (class_count as f64).ln(),
            l_ell: std::f64::consts::SQRT_2,
        }
    }

    /// Squared error on an output clipped to `[−clip, clip]`, assuming
    /// targets in the same range: `M = 4·clip²`, `L_ℓ = 2·clip`.
    pub fn squared_error(clip: f64) -> Self {
        LossSpec {
            kind: LossKind::SquaredError,
            m_bound: 4.0 * clip * clip,
            l_ell: 2.0 * clip,
        }
    }

    /// The matching loss for a predictor kind.
    pub fn for_predictor(p: &Predictor) -> Self {
        match p.kind {
            PredictorKind::RidgeLinear => LossSpec::squared_error(p.logit_clip),
            _ => LossSpec::cross_entropy(p.logit_clip, p.output_dim()),
        }
    }

    pub fn with_bound(mut self, m_bound: f64) -> Self {
        self.m_bound = m_bound;
        self
    }

    /// Loss of clipped `logits` against `target`.
    pub fn value(&self, logits: ArrayView1<'_, f64>, target: Target) -> Result<f64> {
        match (self.kind, target) {
            (LossKind::CrossEntropy, Target::Class(y)) => {
                check_label(y, logits.len())?;
                Ok(cross_entropy(logits, y))
            }
            (LossKind::SquaredError, Target::Value(t)) => {
                let r = logits[0] - t;
                Ok(r * r)
            }
            _ => Err(Error::invalid(
                "target",
                "target type does not match the loss",
            )),
        }
    }

    /// Gradient of the loss with respect to the (clipped) logits.
    pub fn logit_gradient(
        &self,
        logits: ArrayView1<'_, f64>,
        target: Target,
    ) -> Result<Array1<f64>> {
        match (self.kind, target) {
            (LossKind::CrossEntropy, Target::Class(y)) => {
                check_label(y, logits.len())?;
                let mut g = softmax(logits);
                g[y] -= 1.0;
                Ok(g)
            }
            (LossKind::SquaredError, Target::Value(t)) => {
                Ok(Array1::from_elem(1, 2.0 * (logits[0] - t)))
            }
            _ => Err(Error::invalid(
                "target",
                "target type does not match the loss",
            )),
        }
    }
}

fn check_label(y: usize, c: usize) -> Result<()> {
    if y < c {
        Ok(())
    } else {
        Err(Error::invalid(
            "label",
            format!("label {y} out of range for {c} classes"),
        ))
    }
}

/// `ln Σ_k exp(z_k) − z_y`, evaluated without cancellation when `z_y` is the
/// largest logit.
pub fn cross_entropy(z: ArrayView1<'_, f64>, y: usize) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    let own = (z[y] - m).exp();
    if z[y] == m {
        rest.ln_1p()
    } else {
        (m - z[y]) + (own + rest).ln()
    }
}

pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Anything that maps inputs to clipped logits and can differentiate a loss
/// with respect to its input.
pub trait Model: Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn logits(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>>;

    /// `∇_x ℓ(f(x), target)`.
    fn loss_input_gradient(
        &self,
        loss: &LossSpec,
        x: ArrayView1<'_, f64>,
        target: Target,
    ) -> Result<Array1<f64>>;

    /// Row-wise logits for a batch; one output row per input row.
    fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (i, row) in x.outer_iter().enumerate() {
            out.row_mut(i).assign(&self.logits(row)?);
        }
        Ok(out)
    }
}

/// One affine layer; `weights` is `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A small differentiable predictor with clipped logits.
///
/// * `logistic-linear`: `z = W x + b`, `C` outputs.
/// * `mlp`: `z = W₂ tanh(W₁ x + b₁) + b₂`.
/// * `ridge-linear`: `z = wᵀx + b`, one output.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub(crate) kind: PredictorKind,
    pub(crate) layers: Vec<Layer>,
    pub(crate) logit_clip: f64,
}

impl Predictor {
    pub fn new(kind: PredictorKind, layers: Vec<Layer>, logit_clip: f64) -> Result<Self> {
        if !(logit_clip > 0.0) {
            return Err(Error::invalid("logit_clip", "must be positive"));
        }
        let expected_layers = if kind == PredictorKind::Mlp { 2 } else { 1 };
        if layers.len() != expected_layers {
            return Err(Error::invalid(
                "layers",
                format!("{kind:?} needs {expected_layers} layer(s)"),
            ));
        }
        for l in &layers {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weights.nrows(),
                    got: l.bias.len(),
                });
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Numeric("non-finite parameter".into()));
            }
        }
        if kind == PredictorKind::Mlp && layers[1].weights.ncols() != layers[0].weights.nrows() {
            return Err(Error::DimensionMismatch {
                expected: layers[0].weights.nrows(),
                got: layers[1].weights.ncols(),
            });
        }
        if kind == PredictorKind::RidgeLinear && layers[0].weights.nrows() != 1 {
            return Err(Error::invalid(
                "layers",
                "ridge-linear has exactly one output",
            ));
        }
        Ok(Predictor {
            kind,
            layers,
            logit_clip,
        })
    }

    pub fn logistic(weights: Array2<f64>, bias: Array1<f64>, logit_clip: f64) -> Result<Self> {
        Predictor::new(
            PredictorKind::LogisticLinear,
            vec![Layer { weights, bias }],
            logit_clip,
        )
    }

    pub fn mlp(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        logit_clip: f64,
    ) -> Result<Self> {
        Predictor::new(
            PredictorKind::Mlp,
            vec![
                Layer {
                    weights: w1,
                    bias: b1,
                },
                Layer {
                    weights: w2,
                    bias: b2,
                },
            ],
            logit_clip,
        )
    }

    pub fn ridge(w: Array1<f64>, bias: f64, logit_clip: f64) -> Result<Self> {
        let d = w.len();
        Predictor::new(
            PredictorKind::RidgeLinear,
            vec![Layer {
                weights: w.into_shape_with_order((1, d)).unwrap(),
                bias: Array1::from_elem(1, bias),
            }],
            logit_clip,
        )
    }

    /// Seeded initialization: weights uniform in `±1/√fan_in`, zero biases.
    /// `outputs` is ignored for `ridge-linear`.
    pub fn init(
        kind: PredictorKind,
        input_dim: usize,
        outputs: usize,
        hidden: usize,
        logit_clip: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            Layer {
                weights: Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a)),
                bias: Array1::zeros(rows),
            }
        };
        let layers = match kind {
            PredictorKind::LogisticLinear => vec![layer(outputs, input_dim)],
            PredictorKind::RidgeLinear => vec![layer(1, input_dim)],
            PredictorKind::Mlp => {
                if hidden == 0 {
                    return Err(Error::invalid("hidden", "must be positive"));
                }
                vec![layer(hidden, input_dim), layer(outputs, hidden)]
            }
        };
        Predictor::new(kind, layers, logit_clip)
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn logit_clip(&self) -> f64 {
        self.logit_clip
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let expected = self.layers[0].weights.ncols();
        if d == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got: d })
        }
    }

    /// Pre-clip logits, plus hidden activations for the MLP.
    pub(crate) fn raw_batch(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        let first = &self.layers[0];
        let a = x.dot(&first.weights.t()) + &first.bias;
        match self.kind {
            PredictorKind::Mlp => {
                let h = a.mapv(f64::tanh);
                let second = &self.layers[1];
                let z = h.dot(&second.weights.t()) + &second.bias;
                (z, Some(h))
            }
            _ => (a, None),
        }
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn predict_class(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(self.logits(x)?.view()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PredictorFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PredictorFile = serde_json::from_str(text)?;
        file.into_predictor()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Predictor::from_json(&read_text(path)?)
    }
}

pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

impl Model for Predictor {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    fn logits(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_dim(x.len())?;
        let x2 = x.insert_axis(Axis(0));
        let (z, _) = self.raw_batch(x2);
        let b = self.logit_clip;
        Ok(z.row(0).mapv(|v| v.clamp(-b, b)))
    }

    fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let b = self.logit_clip;
        Ok(self.raw_batch(x).0.mapv(|v| v.clamp(-b, b)))
    }

    fn loss_input_gradient(
        &self,
        loss: &LossSpec,
        x: ArrayView1<'_, f64>,
        target: Target,
    ) -> Result<Array1<f64>> {
        self.check_dim(x.len())?;
        let (z, h) = self.raw_batch(x.insert_axis(Axis(0)));
        let z = z.row(0).to_owned();
        let b = self.logit_clip;
        let clipped = z.mapv(|v| v.clamp(-b, b));
        let mut g = loss.logit_gradient(clipped.view(), target)?;
        // Saturated coordinates do not move with the input.
        for (gk, zk) in g.iter_mut().zip(&z) {
            if zk.abs() >= b {
                *gk = 0.0;
            }
        }
        match self.kind {
            PredictorKind::Mlp => {
                let h = h.expect("mlp keeps activations");
                let h = h.row(0);
                let dh = self.layers[1].weights.t().dot(&g);
                let da = &dh * &h.mapv(|v| 1.0 - v * v);
                Ok(self.layers[0].weights.t().dot(&da))
            }
            _ => Ok(self.layers[0].weights.t().dot(&g)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorFile {
    kind: PredictorKind,
    logit_clip: f64,
    layers: Vec<LayerFile>,
}

impl From<&Predictor> for PredictorFile {
    fn from(p: &Predictor) -> Self {
        PredictorFile {
            kind: p.kind,
            logit_clip: p.logit_clip,
            layers: p
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl PredictorFile {
    fn into_predictor(self) -> Result<Predictor> {
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                let got = l.weights.len();
                let weights =
                    Array2::from_shape_vec((l.rows, l.cols), l.weights).map_err(|_| {
                        Error::DimensionMismatch {
                            expected: l.rows * l.cols,
                            got,
                        }
                    })?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Predictor::new(self.kind, layers, self.logit_clip)
    }
}
