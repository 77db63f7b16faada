//! Assembly of the itemized risk-change bound, the label-free ranking score
//! with its median-ratio calibration, and deployment-gate scores.

mod pipeline;
mod report;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Target};
use crate::error::{check_open_unit, Error, Result};
use crate::models::{LossSpec, Model};

pub use pipeline::{diagnose, DiagnoseConfig, DiagnoseInputs};
pub use report::{
    assemble_mmd, assemble_ot, DiagnosticReport, Measurements, MmdTerms, OtTerms, Variant,
    GUARANTEE_LABEL, REPORT_SCHEMA, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub delta: f64,
    pub eta: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            delta: 0.05,
            eta: 0.05,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        check_open_unit("delta", self.delta)?;
        check_open_unit("eta", self.eta)
    }
}

/// Inputs with their supervision.
#[derive(Debug, Clone)]
pub struct Labeled<'a> {
    pub x: ArrayView2<'a, f64>,
    pub t: Vec<Target>,
}

impl<'a> Labeled<'a> {
    pub fn new(x: ArrayView2<'a, f64>, t: Vec<Target>) -> Result<Self> {
        if x.nrows() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: t.len(),
            });
        }
        Ok(Labeled { x, t })
    }

    pub fn from_dataset(ds: &'a Dataset) -> Self {
        Labeled {
            x: ds.features(),
            t: ds.targets(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Per-point losses of `model` on `data`.
pub fn losses(model: &dyn Model, loss: &LossSpec, data: &Labeled<'_>) -> Result<Vec<f64>> {
    let z = model.logits_batch(data.x)?;
    z.outer_iter()
        .zip(&data.t)
        .map(|(zi, &t)| loss.value(zi, t))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `R̂(f) = (1/n)·Σ ℓ(f(x_i), y_i)`.
pub fn empirical_risk(model: &dyn Model, loss: &LossSpec, data: &Labeled<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("data", "must not be empty"));
    }
    Ok(mean(&losses(model, loss, data)?))
}

/// `|R̂_V(f) − R̂_S(f)|`.
pub fn validation_gap(
    model: &dyn Model,
    loss: &LossSpec,
    train: &Labeled<'_>,
    val: &Labeled<'_>,
) -> Result<f64> {
    Ok((empirical_risk(model, loss, val)? - empirical_risk(model, loss, train)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelChange {
    /// Mean ℓ2 distance between clipped logits.
    pub out_disc: f64,
    /// `L_ℓ · out_disc`.
    pub term: f64,
}

pub fn output_discrepancy(
    q: &dyn Model,
    qt: &dyn Model,
    inputs: ArrayView2<'_, f64>,
) -> Result<f64> {
    if inputs.nrows() == 0 {
        return Err(Error::invalid("target_inputs", "must not be empty"));
    }
    if q.output_dim() != qt.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: q.output_dim(),
            got: qt.output_dim(),
        });
    }
    let a = q.logits_batch(inputs)?;
    let b = qt.logits_batch(inputs)?;
    crate::transport::mean_row_distance(a.view(), b.view())
}

/// Model-change term on target inputs.
pub fn model_change(
    q: &dyn Model,
    qt: &dyn Model,
    target_inputs: ArrayView2<'_, f64>,
    loss: &LossSpec,
) -> Result<ModelChange> {
    let out_disc = output_discrepancy(q, qt, target_inputs)?;
    Ok(ModelChange {
        out_disc,
        term: loss.l_ell * out_disc,
    })
}

/// `2M·sqrt(ln(4/δ)/(2n))`.
pub fn label_noise_remainder(n: usize, m_bound: f64, delta: f64) -> Result<f64> {
    check_open_unit("delta", delta)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    Ok(2.0 * m_bound * ((4.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// `M·(sqrt(ln(2/η)/(2m)) + sqrt(ln(2/η)/(2m̃)))`.
pub fn validation_set_error(m_bound: f64, m: usize, m_tilde: usize, eta: f64) -> Result<f64> {
    check_open_unit("eta", eta)?;
    if m == 0 || m_tilde == 0 {
        return Err(Error::invalid("m", "validation sizes must be positive"));
    }
    let l = (2.0 / eta).ln();
    Ok(m_bound * ((l / (2.0 * m as f64)).sqrt() + (l / (2.0 * m_tilde as f64)).sqrt()))
}

/// Frozen scale factor of the ranking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCalibration {
    pub c_hat: f64,
    pub dev_candidate_ids: Vec<String>,
    pub frozen: bool,
}

impl ProxyCalibration {
    /// A frozen calibration with a given factor.
    pub fn fixed(c_hat: f64) -> Self {
        ProxyCalibration {
            c_hat,
            dev_candidate_ids: Vec::new(),
            frozen: true,
        }
    }
}

/// Standard median (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("values", "median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let k = v.len();
    Ok(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

/// One development run: its output discrepancy and its `L̂·Distance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevRun {
    pub id: String,
    pub out_disc: f64,
    pub shift: f64,
}

/// `ĉ = median(OutDisc) / median(L̂·Distance)` over 3 to 5 development runs.
pub fn calibrate_c_hat(dev_runs: &[DevRun]) -> Result<ProxyCalibration> {
    if !(3..=5).contains(&dev_runs.len()) {
        return Err(Error::Calibration(format!(
            "need 3 to 5 development runs, got {}",
            dev_runs.len()
        )));
    }
    let num = median(&dev_runs.iter().map(|r| r.out_disc).collect::<Vec<_>>())?;
    let den = median(&dev_runs.iter().map(|r| r.shift).collect::<Vec<_>>())?;
    if !(den > 0.0) {
        return Err(Error::Calibration(
            "median shift term of the development runs is zero".into(),
        ));
    }
    Ok(ProxyCalibration {
        c_hat: num / den,
        dev_candidate_ids: dev_runs.iter().map(|r| r.id.clone()).collect(),
        frozen: true,
    })
}

/// `OutDisc + ĉ·L̂·Distance`.
pub fn trace_proxy(
    out_disc: f64,
    lipschitz: f64,
    distance: f64,
    cal: &ProxyCalibration,
) -> Result<f64> {
    if !cal.frozen {
        return Err(Error::Calibration(
            "calibration must be frozen before scoring".into(),
        ));
    }
    Ok(out_disc + cal.c_hat * lipschitz * distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateVariant {
    TraceW,
    TraceMmd,
}

/// Uncalibrated gate score of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateScore {
    pub candidate_id: String,
    pub out_disc: f64,
    pub distance: f64,
    pub lipschitz_factor: Option<f64>,
    pub b_hat: Option<f64>,
    pub score: f64,
    pub variant: GateVariant,
}

/// Variant-specific scale estimates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateEstimates {
    pub lipschitz: Option<f64>,
    pub b_hat: Option<f64>,
}

/// `TRACE-W = OutDisc + L̂·W` or `TRACE-MMD = OutDisc + B̂·MMD`.
pub fn gate_score_from_parts(
    candidate_id: &str,
    out_disc: f64,
    distance: f64,
    variant: GateVariant,
    est: &GateEstimates,
) -> Result<GateScore> {
    let (lipschitz_factor, b_hat, scale) = match variant {
        GateVariant::TraceW => {
            let l = est
                .lipschitz
                .ok_or_else(|| Error::invalid("lipschitz", "TRACE-W needs a Lipschitz estimate"))?;
            (Some(l), None, l)
        }
        GateVariant::TraceMmd => {
            let b = est
                .b_hat
                .ok_or_else(|| Error::invalid("b_hat", "TRACE-MMD needs an RKHS-norm estimate"))?;
            (None, Some(b), b)
        }
    };
    Ok(GateScore {
        candidate_id: candidate_id.to_string(),
        out_disc,
        distance,
        lipschitz_factor,
        b_hat,
        score: out_disc + scale * distance,
        variant,
    })
}

/// Scores `candidate` against `reference`: output discrepancy on
/// `target_inputs` plus the scaled distance between the anchor and target
/// feature clouds.
#[allow(clippy::too_many_arguments)]
pub fn gate_score(
    candidate_id: &str,
    candidate: &dyn Model,
    reference: &dyn Model,
    anchor_features: ArrayView2<'_, f64>,
    target_inputs: ArrayView2<'_, f64>,
    variant: GateVariant,
    est: &GateEstimates,
    transport: &crate::transport::TransportConfig,
    kernel: &crate::kernels::KernelConfig,
) -> Result<GateScore> {
    let out_disc = output_discrepancy(reference, candidate, target_inputs)?;
    let distance = match variant {
        GateVariant::TraceW => {
            crate::transport::sinkhorn_divergence(anchor_features, target_inputs, transport)?
        }
        GateVariant::TraceMmd => crate::kernels::mmd(anchor_features, target_inputs, kernel)?.mmd,
    };
    gate_score_from_parts(candidate_id, out_disc, distance, variant, est)
}

/// Negated mean maximum softmax probability on anchor inputs.
pub fn msp_baseline(model: &dyn Model, anchor_inputs: ArrayView2<'_, f64>) -> Result<f64> {
    if anchor_inputs.nrows() == 0 {
        return Err(Error::invalid("anchor_inputs", "must not be empty"));
    }
    let z = model.logits_batch(anchor_inputs)?;
    let total: f64 = z
        .outer_iter()
        .map(|r| crate::models::softmax(r).fold(0.0f64, |a, &b| a.max(b)))
        .sum();
    Ok(-total / anchor_inputs.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Predictor;
    use ndarray::{array, Array1, Array2};

    fn stub_losses(values: &[f64]) -> (Array2<f64>, Vec<Target>) {
        (
            Array2::from_shape_fn((values.len(), 1), |(i, _)| values[i]),
            vec![Target::Value(0.0); values.len()],
        )
    }

    /// Squared loss on an identity output recovers the injected value.
    fn identity() -> Predictor {
        Predictor::ridge(array![1.0], 0.0, 1e6).unwrap()
    }

    #[test]
    fn risk_examples() {
        let ce = LossSpec::cross_entropy(10.0, 2);
        let uniform = Predictor::logistic(Array2::zeros((2, 2)), Array1::zeros(2), 10.0).unwrap();
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]];
        let t = vec![Target::Class(0), Target::Class(1), Target::Class(1)];
        let data = Labeled::new(x.view(), t).unwrap();
        assert!((empirical_risk(&uniform, &ce, &data).unwrap() - 2f64.ln()).abs() < 1e-15);

        let sat = Predictor::logistic(array![[-100.0], [100.0]], array![0.0, 0.0], 10.0).unwrap();
        let x = array![[1.0], [-1.0]];
        let data = Labeled::new(x.view(), vec![Target::Class(1), Target::Class(0)]).unwrap();
        let r = empirical_risk(&sat, &ce, &data).unwrap();
        assert!((r - (-20f64).exp().ln_1p()).abs() < 1e-15);

        let one = Labeled::new(x.slice(ndarray::s![0..1, ..]), vec![Target::Class(0)]).unwrap();
        let direct = ce
            .value(sat.logits(x.row(0)).unwrap().view(), Target::Class(0))
            .unwrap();
        assert_eq!(empirical_risk(&sat, &ce, &one).unwrap(), direct);
    }

    #[test]
    fn gap_examples() {
        let se = LossSpec::squared_error(1e6);
        let (xt, tt) = stub_losses(&[0.2f64.sqrt(), 0.6f64.sqrt()]);
        let (xv, tv) = stub_losses(&[0.5f64.sqrt(), 0.6f64.sqrt()]);
        let train = Labeled::new(xt.view(), tt).unwrap();
        let val = Labeled::new(xv.view(), tv).unwrap();
        assert!((validation_gap(&identity(), &se, &train, &val).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(
            validation_gap(&identity(), &se, &train, &train).unwrap(),
            0.0
        );
        let zero = Predictor::ridge(array![0.0], 0.0, 1e6).unwrap();
        let (xv, _) = stub_losses(&[3.0, 4.0]);
        let val = Labeled::new(xv.view(), vec![Target::Value(0.0); 2]).unwrap();
        assert_eq!(validation_gap(&zero, &se, &train, &val).unwrap(), 0.0);
    }

    #[test]
    fn model_change_examples() {
        let ce = LossSpec::cross_entropy(10.0, 2);
        let a =
            Predictor::logistic(array![[1.0, 2.0], [-1.0, 0.5]], array![0.1, 0.2], 10.0).unwrap();
        let x = array![[0.5, 0.5], [1.0, -1.0], [-2.0, 0.3]];
        assert_eq!(model_change(&a, &a, x.view(), &ce).unwrap().term, 0.0);

        let shifted = Predictor::logistic(
            a.layers()[0].weights.clone(),
            array![0.1 + 3.0, 0.2 + 4.0],
            10.0,
        )
        .unwrap();
        let mc = model_change(&a, &shifted, x.view(), &ce).unwrap();
        assert!((mc.out_disc - 5.0).abs() < 1e-12);
        assert!((mc.term - 5.0 * std::f64::consts::SQRT_2).abs() < 1e-12);

        let b =
            Predictor::logistic(array![[0.0, 1.0], [1.0, 1.0]], array![0.0, 0.0], 10.0).unwrap();
        let mut hand = 0.0;
        for r in x.outer_iter() {
            let za = [r[0] + 2.0 * r[1] + 0.1, -r[0] + 0.5 * r[1] + 0.2];
            let zb = [r[1], r[0] + r[1]];
            hand += ((za[0] - zb[0]).powi(2) + (za[1] - zb[1]).powi(2)).sqrt();
        }
        let mc = model_change(&a, &b, x.view(), &ce).unwrap();
        assert!((mc.term - std::f64::consts::SQRT_2 * hand / 3.0).abs() < 1e-12);
    }

    #[test]
    fn remainder_examples() {
        let v = label_noise_remainder(200, 1.0, 0.05).unwrap();
        assert!((v - 2.0 * (80f64.ln() / 400.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.20932).abs() < 1e-4);
        assert_eq!(label_noise_remainder(200, 0.0, 0.05).unwrap(), 0.0);
        assert!((label_noise_remainder(800, 1.0, 0.05).unwrap() - v / 2.0).abs() < 1e-15);
        assert!(label_noise_remainder(200, 1.0, 1.5).is_err());

        let v = validation_set_error(1.0, 200, 200, 0.05).unwrap();
        assert!((v - 2.0 * (40f64.ln() / 400.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.19214).abs() < 1e-4);
        assert_eq!(validation_set_error(0.0, 200, 300, 0.05).unwrap(), 0.0);
        assert!(validation_set_error(1.0, 200, 200, 0.0).is_err());
    }

    #[test]
    fn proxy_and_calibration() {
        let one = ProxyCalibration::fixed(1.0);
        assert!((trace_proxy(42.23, 1.0, 0.51, &one).unwrap() - 42.74).abs() < 1e-12);
        assert_eq!(trace_proxy(3.0, 2.0, 0.0, &one).unwrap(), 3.0);
        let two = ProxyCalibration::fixed(2.0);
        let base = trace_proxy(3.0, 2.0, 0.5, &one).unwrap() - 3.0;
        assert_eq!(trace_proxy(3.0, 2.0, 0.5, &two).unwrap() - 3.0, 2.0 * base);
        let open = ProxyCalibration {
            frozen: false,
            ..ProxyCalibration::fixed(1.0)
        };
        assert!(matches!(
            trace_proxy(1.0, 1.0, 1.0, &open),
            Err(Error::Calibration(_))
        ));

        let runs = |pairs: &[(f64, f64)]| -> Vec<DevRun> {
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(o, s))| DevRun {
                    id: format!("dev{i}"),
                    out_disc: o,
                    shift: s,
                })
                .collect()
        };
        let cal = calibrate_c_hat(&runs(&[(2.0, 1.0), (4.0, 2.0), (6.0, 3.0)])).unwrap();
        assert_eq!(cal.c_hat, 2.0);
        assert!(cal.frozen);
        assert_eq!(
            calibrate_c_hat(&runs(&[(1.0, 5.0), (3.0, 3.0), (5.0, 1.0)]))
                .unwrap()
                .c_hat,
            1.0
        );
        assert!(matches!(
            calibrate_c_hat(&runs(&[(1.0, 1.0), (2.0, 2.0)])),
            Err(Error::Calibration(_))
        ));
        assert!(calibrate_c_hat(&runs(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])).is_err());
    }

    #[test]
    fn gate_examples() {
        let est = GateEstimates {
            lipschitz: Some(2.0),
            b_hat: Some(3.0),
        };
        assert_eq!(
            gate_score_from_parts("c", 5.0, 0.5, GateVariant::TraceW, &est)
                .unwrap()
                .score,
            6.0
        );
        let s = gate_score_from_parts("c", 5.0, 0.2, GateVariant::TraceMmd, &est)
            .unwrap()
            .score;
        assert!((s - 5.6).abs() < 1e-15);
        assert!(gate_score_from_parts(
            "c",
            5.0,
            0.2,
            GateVariant::TraceMmd,
            &GateEstimates::default()
        )
        .is_err());

        let p = Predictor::init(
            crate::models::PredictorKind::LogisticLinear,
            2,
            2,
            0,
            10.0,
            1,
        )
        .unwrap();
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let s = gate_score(
            "self",
            &p,
            &p,
            x.view(),
            x.view(),
            GateVariant::TraceW,
            &est,
            &Default::default(),
            &Default::default(),
        )
        .unwrap();
        assert!(s.score.abs() < 1e-9);
    }

    #[test]
    fn msp_is_negated_confidence() {
        let uniform = Predictor::logistic(Array2::zeros((4, 2)), Array1::zeros(4), 10.0).unwrap();
        let x = array![[1.0, 2.0], [0.0, 0.0]];
        assert!((msp_baseline(&uniform, x.view()).unwrap() + 0.25).abs() < 1e-15);
    }

    #[test]
    fn calibration_moves_the_proxy_but_never_the_gate_score() {
        let est = GateEstimates {
            lipschitz: Some(1.5),
            b_hat: Some(0.7),
        };
        let w = gate_score_from_parts("c", 0.2, 0.4, GateVariant::TraceW, &est).unwrap();
        let m = gate_score_from_parts("c", 0.2, 0.4, GateVariant::TraceMmd, &est).unwrap();
        assert!((w.score - 0.8).abs() < 1e-15);
        assert!((m.score - 0.48).abs() < 1e-15);
        let mut proxies = Vec::new();
        for c_hat in [0.1, 1.0, 10.0] {
            proxies.push(trace_proxy(0.2, 1.5, 0.4, &ProxyCalibration::fixed(c_hat)).unwrap());
            assert_eq!(
                gate_score_from_parts("c", 0.2, 0.4, GateVariant::TraceW, &est).unwrap(),
                w
            );
        }
        assert!(proxies[0] < proxies[1] && proxies[1] < proxies[2]);
    }
}
