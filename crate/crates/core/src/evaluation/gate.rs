use std::collections::BTreeMap;

use ndarray::{s, Array1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auprc, auroc, label_harmful, spearman_rho};
use super::sweep::with_worker_pool;
use crate::datasets::{make_blobs_shift, sample_blobs, Dataset, ShiftConfig, Target, Translation};
use crate::diagnostics::{
    empirical_risk, gate_score_from_parts, median, msp_baseline, output_discrepancy, GateEstimates,
    GateScore, GateVariant, Labeled,
};
use crate::error::{Error, Result};
use crate::kernels::{estimate_rkhs_norm, mmd, KernelConfig};
use crate::models::{
    argmax, fit, LossSpec, Model, Predictor, PredictorKind, TrainConfig, DEFAULT_LOGIT_CLIP,
};
use crate::sensitivity::{lipschitz_proxy, Labels, LipschitzConfig};
use crate::transport::{sinkhorn_divergence, TransportConfig};

/// Score columns of the gate table.
pub const SCORE_COLUMNS: [&str; 4] = ["trace-w", "trace-mmd", "out-disc", "msp"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSpec {
    /// Number of constructed candidates; candidate `k` moves the reference
    /// output bias by `k·step` along a harm-increasing direction.
    pub candidates: usize,
    pub step: f64,
    pub anchor_n: usize,
    pub target_translation: f64,
    pub seed: u64,
    pub test_size: usize,
    pub test_seed: u64,
    pub logit_clip: f64,
    pub train: TrainConfig,
    pub transport: TransportConfig,
    pub kernel: KernelConfig,
    pub lipschitz: LipschitzConfig,
    /// Target rows used for the RKHS-norm fit of each candidate.
    pub rkhs_points: usize,
    /// Harm thresholds; the median `ΔR` when empty.
    pub taus: Vec<f64>,
}

impl Default for GateSpec {
    fn default() -> Self {
        GateSpec {
            candidates: 20,
            step: 0.1,
            anchor_n: 2000,
            target_translation: 0.5,
            seed: 0,
            test_size: 100_000,
            test_seed: 9_999,
            logit_clip: DEFAULT_LOGIT_CLIP,
            train: TrainConfig {
                learning_rate: 0.05,
                epochs: 300,
                ..Default::default()
            },
            transport: TransportConfig::default(),
            kernel: KernelConfig::default(),
            lipschitz: LipschitzConfig::default(),
            rkhs_points: 300,
            taus: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GateCandidate {
    pub id: String,
    pub model: Predictor,
}

/// Reference model, candidates and the data they are judged on. `test`
/// is the labeled anchor sample for the true risk change.
#[derive(Debug, Clone)]
pub struct GateSetup {
    pub reference: Predictor,
    pub candidates: Vec<GateCandidate>,
    pub anchor: Dataset,
    pub target: Dataset,
    pub test: Dataset,
}

fn shifted_bias(p: &Predictor, direction: &Array1<f64>, t: f64) -> Result<Predictor> {
    let mut layers = p.layers().to_vec();
    let last = layers.last_mut().expect("predictors have a layer");
    last.bias = &last.bias + &(direction * t);
    Predictor::new(p.kind(), layers, p.logit_clip())
}

/// Logistic reference on blobs plus `spec.candidates` bias-perturbed
/// copies. The sign of the perturbation is chosen so that the first step
/// raises the anchor risk.
pub fn constructed_gate_setup(spec: &GateSpec) -> Result<GateSetup> {
    if spec.candidates < 2 {
        return Err(Error::invalid(
            "candidates",
            "a gate needs at least two candidates",
        ));
    }
    if !(spec.step > 0.0) {
        return Err(Error::invalid("step", "must be positive"));
    }
    let shift = ShiftConfig {
        translation: Translation::Scalar(spec.target_translation),
        n: spec.anchor_n,
        seed: spec.seed,
        ..Default::default()
    };
    let (anchor, target) = make_blobs_shift(&shift)?;
    let test = sample_blobs(spec.test_size, spec.test_seed);
    let train = TrainConfig {
        seed: spec.seed,
        ..spec.train
    };
    let reference = fit(
        PredictorKind::LogisticLinear,
        anchor.features(),
        &anchor.targets(),
        anchor.class_count(),
        0,
        spec.logit_clip,
        &train,
    )?;
    let loss = LossSpec::cross_entropy(spec.logit_clip, anchor.class_count());
    let labeled = Labeled::from_dataset(&test);
    let mut direction = Array1::zeros(anchor.class_count());
    direction[0] = 1.0;
    direction[1] = -1.0;
    let up = empirical_risk(
        &shifted_bias(&reference, &direction, spec.step)?,
        &loss,
        &labeled,
    )?;
    let down = empirical_risk(
        &shifted_bias(&reference, &direction, -spec.step)?,
        &loss,
        &labeled,
    )?;
    if down > up {
        direction = -direction;
    }
    let candidates = (1..=spec.candidates)
        .map(|k| {
            Ok(GateCandidate {
                id: format!("cand-{k:02}"),
                model: shifted_bias(&reference, &direction, spec.step * k as f64)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateSetup {
        reference,
        candidates,
        anchor,
        target,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub candidate_id: String,
    pub delta_r: f64,
    pub trace_w: GateScore,
    pub trace_mmd: GateScore,
    pub msp: f64,
}

impl GateRow {
    pub fn score(&self, column: &str) -> Option<f64> {
        match column {
            "trace-w" => Some(self.trace_w.score),
            "trace-mmd" => Some(self.trace_mmd.score),
            "out-disc" => Some(self.trace_w.out_disc),
            "msp" => Some(self.msp),
            _ => None,
        }
    }
}

/// One cell group of the threshold table; undefined metrics carry a note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMetric {
    pub tau: f64,
    pub score: String,
    pub positives: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub rows: Vec<GateRow>,
    pub sinkhorn_distance: f64,
    pub mmd_distance: f64,
    /// Spearman of each score column against `|ΔR|`.
    pub rho: BTreeMap<String, Option<f64>>,
    pub metrics: Vec<GateMetric>,
    /// Whether a constant distance term leaves the OutDisc ranking intact.
    pub reduction_holds: bool,
    pub flags: Vec<String>,
}

impl GateReport {
    pub fn metric(&self, tau: f64, score: &str) -> Option<&GateMetric> {
        self.metrics
            .iter()
            .find(|m| m.tau == tau && m.score == score)
    }
}

/// Indices sorted by descending score, ties by index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    idx
}

fn pseudo_labels(reference: &dyn Model, x: ndarray::ArrayView2<'_, f64>) -> Result<Vec<Target>> {
    let z = reference.logits_batch(x)?;
    Ok(z.outer_iter().map(|r| Target::Class(argmax(r))).collect())
}

/// Scores every candidate against the reference, labels harm per threshold
/// and tabulates AUROC, AUPRC and Spearman per score column. Candidate
/// scale estimates use target inputs labeled by the reference.
pub fn evaluate_gate(setup: &GateSetup, spec: &GateSpec) -> Result<GateReport> {
    if setup.candidates.len() < 2 {
        return Err(Error::invalid(
            "candidates",
            "a gate needs at least two candidates",
        ));
    }
    with_worker_pool(|| evaluate_inner(setup, spec))?
}

fn evaluate_inner(setup: &GateSetup, spec: &GateSpec) -> Result<GateReport> {
    let reference = &setup.reference;
    let classes = reference.output_dim().max(2);
    let loss = LossSpec::cross_entropy(reference.logit_clip(), classes);
    let anchor_x = setup.anchor.features();
    let target_x = setup.target.features();
    let w = sinkhorn_divergence(anchor_x, target_x, &spec.transport)?;
    let d_mmd = mmd(anchor_x, target_x, &spec.kernel)?.mmd;
    let test = Labeled::from_dataset(&setup.test);
    let r_ref = empirical_risk(reference, &loss, &test)?;
    let rk = spec.rkhs_points.min(target_x.nrows());
    let rk_x = target_x.slice(s![..rk, ..]);
    let rk_t = pseudo_labels(reference, rk_x)?;

    let rows = setup
        .candidates
        .par_iter()
        .map(|c| {
            let delta_r = empirical_risk(&c.model, &loss, &test)? - r_ref;
            let out_disc = output_discrepancy(reference, &c.model, target_x)?;
            let lip = lipschitz_proxy(
                &c.model,
                &loss,
                target_x,
                Labels::PseudoFrom(reference),
                &spec.lipschitz,
            )?;
            let b_hat = estimate_rkhs_norm(&c.model, &loss, rk_x, &rk_t, &spec.kernel)?;
            let est = GateEstimates {
                lipschitz: Some(lip.value),
                b_hat: Some(b_hat.b_hat),
            };
            Ok(GateRow {
                candidate_id: c.id.clone(),
                delta_r,
                trace_w: gate_score_from_parts(&c.id, out_disc, w, GateVariant::TraceW, &est)?,
                trace_mmd: gate_score_from_parts(
                    &c.id,
                    out_disc,
                    d_mmd,
                    GateVariant::TraceMmd,
                    &est,
                )?,
                msp: msp_baseline(&c.model, anchor_x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let signed: Vec<f64> = rows.iter().map(|r| r.delta_r).collect();
    let abs: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
    let mut flags = Vec::new();
    let mut rho = BTreeMap::new();
    for col in SCORE_COLUMNS {
        let scores: Vec<f64> = rows
            .iter()
            .map(|r| r.score(col).expect("known column"))
            .collect();
        let value = match spearman_rho(&scores, &abs) {
            Ok(v) => Some(v),
            Err(e) => {
                flags.push(format!("{col} spearman undefined: {e}"));
                None
            }
        };
        rho.insert(col.to_string(), value);
    }

    let taus = if spec.taus.is_empty() {
        vec![median(&signed)?]
    } else {
        spec.taus.clone()
    };
    let mut metrics = Vec::new();
    for &tau in &taus {
        let labels = label_harmful(&signed, tau).labels;
        let positives = labels.iter().filter(|&&l| l).count();
        for col in SCORE_COLUMNS {
            let scores: Vec<f64> = rows
                .iter()
                .map(|r| r.score(col).expect("known column"))
                .collect();
            let a = auroc(&scores, &labels);
            let p = auprc(&scores, &labels);
            let note = a
                .as_ref()
                .err()
                .or(p.as_ref().err())
                .map(|e| format!("undefined: {e}"));
            metrics.push(GateMetric {
                tau,
                score: col.to_string(),
                positives,
                auroc: a.ok(),
                auprc: p.ok(),
                note,
            });
        }
    }

    let out_disc: Vec<f64> = rows.iter().map(|r| r.trace_w.out_disc).collect();
    let lip_mean = rows
        .iter()
        .map(|r| r.trace_w.lipschitz_factor.unwrap_or(0.0))
        .sum::<f64>()
        / rows.len() as f64;
    let constant = GateEstimates {
        lipschitz: Some(lip_mean),
        b_hat: None,
    };
    let reduced = rows
        .iter()
        .map(|r| {
            gate_score_from_parts(
                &r.candidate_id,
                r.trace_w.out_disc,
                w,
                GateVariant::TraceW,
                &constant,
            )
            .map(|g| g.score)
        })
        .collect::<Result<Vec<_>>>()?;
    let reduction_holds = descending_order(&reduced) == descending_order(&out_disc);

    Ok(GateReport {
        rows,
        sinkhorn_distance: w,
        mmd_distance: d_mmd,
        rho,
        metrics,
        reduction_holds,
        flags,
    })
}
