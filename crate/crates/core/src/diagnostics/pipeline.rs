use serde::{Deserialize, Serialize};

use super::report::{
    assemble_mmd, assemble_ot, DiagnosticReport, Measurements, MmdTerms, OtTerms, Variant,
};
use super::{
    empirical_risk, label_noise_remainder, losses, model_change, validation_set_error,
    ConfidenceConfig, Labeled,
};
use crate::error::{Error, Result};
use crate::kernels::{estimate_rkhs_norm, mmd, KernelConfig};
use crate::models::{LossSpec, Model};
use crate::sensitivity::{lipschitz_proxy, Labels, LipschitzConfig};
use crate::transport::{
    population_residual, sinkhorn_divergence_detailed, ResidualConfig, TransportConfig,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub variant: Option<Variant>,
    pub transport: TransportConfig,
    pub residual: ResidualConfig,
    pub kernel: KernelConfig,
    pub lipschitz: LipschitzConfig,
    pub confidence: ConfidenceConfig,
}

/// Everything one diagnosis needs. `source_*` is the anchor sample used to
/// train `q`; `target_*` the shifted sample used to train `qt`.
pub struct DiagnoseInputs<'a> {
    pub q: &'a dyn Model,
    pub qt: &'a dyn Model,
    pub loss: LossSpec,
    pub source_train: Labeled<'a>,
    pub source_val: Labeled<'a>,
    pub target_train: Labeled<'a>,
    pub target_val: Labeled<'a>,
    /// Whether `target_val` labels are trusted; otherwise the Lipschitz
    /// proxy of `qt` uses pseudo-labels from `q`.
    pub target_labels: bool,
    /// Large labeled anchor sample for the true risk change.
    pub source_test: Option<Labeled<'a>>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Computes every term of the bound for one replacement `q → qt`.
///
/// * The empirical shift is `(L̂(f_Q) + L̂(f_Q̃))·c_h·S_ε` with `S_ε` the
///   Sinkhorn divergence between the source and target training inputs.
/// * Lipschitz proxies are taken on the validation splits.
/// * The label-noise remainder uses `n = min(n, ñ)`; the population residual
///   uses the source training size and input dimension.
pub fn diagnose(inputs: &DiagnoseInputs<'_>, cfg: &DiagnoseConfig) -> Result<DiagnosticReport> {
    cfg.confidence.validate()?;
    let variant = cfg.variant.unwrap_or(Variant::Ot);
    for (name, part) in [
        ("source_train", &inputs.source_train),
        ("source_val", &inputs.source_val),
        ("target_train", &inputs.target_train),
        ("target_val", &inputs.target_val),
    ] {
        if part.is_empty() {
            return Err(Error::Degenerate(format!("{name} is empty")));
        }
    }
    let dim = inputs.source_train.x.ncols();
    if inputs.target_train.x.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: inputs.target_train.x.ncols(),
        });
    }
    let loss = &inputs.loss;
    let (q, qt) = (inputs.q, inputs.qt);

    let l_train_q = losses(q, loss, &inputs.source_train)?;
    let l_val_q = losses(q, loss, &inputs.source_val)?;
    let l_train_qt = losses(qt, loss, &inputs.target_train)?;
    let l_val_qt = losses(qt, loss, &inputs.target_val)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst = max_of(&l_train_q)
        .max(max_of(&l_val_q))
        .max(max_of(&l_train_qt))
        .max(max_of(&l_val_qt));

    let mc = model_change(q, qt, inputs.target_train.x, loss)?;
    let sk =
        sinkhorn_divergence_detailed(inputs.source_train.x, inputs.target_train.x, &cfg.transport)?;
    let lip_q = lipschitz_proxy(
        q,
        loss,
        inputs.source_val.x,
        Labels::GroundTruth(&inputs.source_val.t),
        &cfg.lipschitz,
    )?;
    let qt_labels = if inputs.target_labels {
        Labels::GroundTruth(&inputs.target_val.t)
    } else {
        Labels::PseudoFrom(q)
    };
    let lip_qt = lipschitz_proxy(qt, loss, inputs.target_val.x, qt_labels, &cfg.lipschitz)?;

    let c_h = cfg.transport.c_h;
    let (n, n_t) = (inputs.source_train.len(), inputs.target_train.len());
    let (m, m_t) = (inputs.source_val.len(), inputs.target_val.len());
    let delta = cfg.confidence.delta;
    let terms = OtTerms {
        g_q_val: (mean(&l_val_q) - mean(&l_train_q)).abs(),
        g_qt_val: (mean(&l_val_qt) - mean(&l_train_qt)).abs(),
        model_change: mc.term,
        empirical_shift_penalty: (lip_q.value + lip_qt.value) * c_h * sk.value,
        label_noise_remainder: label_noise_remainder(n.min(n_t), loss.m_bound, delta)?,
        validation_set_error: validation_set_error(loss.m_bound, m, m_t, cfg.confidence.eta)?,
        population_residual: lip_qt.value
            * c_h
            * population_residual(n, dim, cfg.residual.c_x, delta)?,
    };

    let mut measurements = Measurements {
        out_disc: mc.out_disc,
        sinkhorn_divergence: sk.value,
        sinkhorn_convergence_gap: sk.convergence_gap,
        lipschitz_q: Some(lip_q),
        lipschitz_qt: Some(lip_qt),
        loss_bound: loss.m_bound,
        l_ell: loss.l_ell,
        worst_observed_loss: worst,
        risk_train_q: mean(&l_train_q),
        risk_val_q: mean(&l_val_q),
        risk_train_qt: mean(&l_train_qt),
        risk_val_qt: mean(&l_val_qt),
        n_source: n,
        n_target: n_t,
        m_val: m,
        m_val_target: m_t,
        dim,
        ..Default::default()
    };

    let mut report = match variant {
        Variant::Ot => assemble_ot(&terms)?,
        Variant::Mmd => {
            let d = mmd(inputs.source_train.x, inputs.target_train.x, &cfg.kernel)?;
            let rkhs = estimate_rkhs_norm(
                qt,
                loss,
                inputs.target_val.x,
                &inputs.target_val.t,
                &cfg.kernel,
            )?;
            measurements.mmd = Some(d.mmd);
            measurements.mmd2_signed = Some(d.mmd2);
            measurements.mmd_bandwidth = Some(d.bandwidth);
            measurements.b_hat = Some(rkhs.b_hat);
            measurements.b_hat_lambda = Some(rkhs.lambda);
            let extra = MmdTerms {
                empirical_shift_ot_q: lip_q.value * c_h * sk.value,
                b_hat: rkhs.b_hat,
                mmd: d.mmd,
                concentration: crate::kernels::mmd_concentration(
                    n.min(n_t),
                    cfg.kernel.c_kappa,
                    delta,
                )?,
            };
            assemble_mmd(&terms, &extra)?
        }
    };
    report.measurements = measurements;
    report.config_echo = serde_json::to_value(cfg)?;
    if let Some(test) = &inputs.source_test {
        let dr = empirical_risk(qt, loss, test)? - empirical_risk(q, loss, test)?;
        report = report.with_delta_r(dr);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_blobs_shift, split, ShiftConfig, SplitSpec, Translation};
    use crate::models::{fit, PredictorKind, TrainConfig};

    fn run(tr: f64, variant: Variant) -> DiagnosticReport {
        let cfg = ShiftConfig {
            translation: Translation::Scalar(tr),
            n: 400,
            seed: 1,
            ..Default::default()
        };
        let (s, t) = make_blobs_shift(&cfg).unwrap();
        let spec = SplitSpec {
            seed: 1,
            ..Default::default()
        };
        let (s_tr, s_va) = split(&s, &spec).unwrap();
        let (t_tr, t_va) = split(&t, &spec).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.1,
            epochs: 100,
            ..Default::default()
        };
        let q = fit(
            PredictorKind::LogisticLinear,
            s_tr.features(),
            &s_tr.targets(),
            2,
            0,
            10.0,
            &tc,
        )
        .unwrap();
        let qt = fit(
            PredictorKind::LogisticLinear,
            t_tr.features(),
            &t_tr.targets(),
            2,
            0,
            10.0,
            &tc,
        )
        .unwrap();
        let test = crate::datasets::sample_blobs(5000, 77);
        let inputs = DiagnoseInputs {
            q: &q,
            qt: &qt,
            loss: LossSpec::cross_entropy(10.0, 2),
            source_train: Labeled::from_dataset(&s_tr),
            source_val: Labeled::from_dataset(&s_va),
            target_train: Labeled::from_dataset(&t_tr),
            target_val: Labeled::from_dataset(&t_va),
            target_labels: true,
            source_test: Some(Labeled::from_dataset(&test)),
        };
        diagnose(
            &inputs,
            &DiagnoseConfig {
                variant: Some(variant),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_shift_leaves_only_gaps_and_remainders() {
        let r = run(0.0, Variant::Ot);
        assert_eq!(r.model_change, 0.0);
        assert_eq!(r.empirical_shift_penalty, 0.0);
        assert_eq!(r.delta_r_signed, Some(0.0));
        let expected = r.g_q_val
            + r.g_qt_val
            + r.label_noise_remainder
            + r.validation_set_error
            + r.population_residual;
        assert!((r.total_ot - expected).abs() < 1e-12);
    }

    #[test]
    fn larger_shift_gives_larger_total() {
        let small = run(0.25, Variant::Mmd);
        let large = run(1.0, Variant::Mmd);
        assert!(large.total_ot > small.total_ot);
        assert!(large.total_mmd.unwrap() > small.total_mmd.unwrap());
        for r in [&small, &large] {
            assert!(r.total_ot >= r.delta_r_true.unwrap());
            assert!(r.measurements.worst_observed_loss <= 20.0 + 2f64.ln());
        }
    }
}
