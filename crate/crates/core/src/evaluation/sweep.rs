use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auprc, auroc, label_harmful, spearman_rho};
use crate::datasets::{
    make_classification_shift, sample_blobs, sample_moons, split, Dataset, ShiftConfig, SplitSpec,
    Translation, World,
};
use crate::diagnostics::{
    calibrate_c_hat, diagnose, median, trace_proxy, DevRun, DiagnoseConfig, DiagnoseInputs,
    DiagnosticReport, Labeled, ProxyCalibration, Variant,
};
use crate::error::{Error, Result};
use crate::models::{
    fit, LossSpec, PredictorKind, TrainConfig, DEFAULT_HIDDEN, DEFAULT_LOGIT_CLIP,
};

/// Environment variable capping the worker count of sweeps and gates.
pub const THREADS_ENV: &str = "TRACE_KIT_THREADS";

/// Runs `f` on a pool sized by [`THREADS_ENV`] when set, else on the global
/// pool.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::invalid("TRACE_KIT_THREADS", format!("not a worker count: `{v}`"))
            })?;
            if n == 0 {
                return Err(Error::invalid("TRACE_KIT_THREADS", "must be positive"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Numeric(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub world: World,
    /// Blob translations or moon warp strengths.
    pub severities: Vec<f64>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Calibration runs, disjoint from `seeds`; run `i` uses
    /// `severities[i % len]` at `dev_size`.
    pub dev_seeds: Vec<u64>,
    pub dev_size: usize,
    /// Shared anchor test set for the true risk change.
    pub test_size: usize,
    pub test_seed: u64,
    /// Logistic for blobs and an MLP for moons when unset.
    pub model: Option<PredictorKind>,
    pub hidden: usize,
    pub logit_clip: f64,
    pub moons_noise: f64,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub diagnose: DiagnoseConfig,
    pub variants: Vec<Variant>,
    /// Harm thresholds for the summary; the median `ΔR` when empty.
    pub taus: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            world: World::Blobs,
            severities: vec![0.25, 0.5, 1.0],
            sizes: vec![1000, 2000],
            seeds: vec![0, 1, 2, 3],
            dev_seeds: vec![100, 101, 102],
            dev_size: 1000,
            test_size: 100_000,
            test_seed: 9_999,
            model: None,
            hidden: DEFAULT_HIDDEN,
            logit_clip: DEFAULT_LOGIT_CLIP,
            moons_noise: 0.1,
            train: TrainConfig {
                learning_rate: 0.05,
                epochs: 300,
                ..Default::default()
            },
            split: SplitSpec::default(),
            diagnose: DiagnoseConfig::default(),
            variants: vec![Variant::Ot, Variant::Mmd],
            taus: Vec::new(),
        }
    }
}

impl SweepSpec {
    pub fn blobs() -> Self {
        SweepSpec::default()
    }

    pub fn moons() -> Self {
        SweepSpec {
            world: World::Moons,
            severities: vec![0.25, 1.0, 2.0],
            ..Default::default()
        }
    }

    pub fn predictor_kind(&self) -> PredictorKind {
        self.model.unwrap_or(match self.world {
            World::Moons => PredictorKind::Mlp,
            _ => PredictorKind::LogisticLinear,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.world == World::GaussianMean {
            return Err(Error::invalid(
                "world",
                "sweeps run on classification worlds",
            ));
        }
        for (name, empty) in [
            ("severities", self.severities.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("variants", self.variants.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(name, "must not be empty"));
            }
        }
        if self.dev_seeds.iter().any(|s| self.seeds.contains(s)) {
            return Err(Error::invalid(
                "dev_seeds",
                "must be disjoint from the evaluation seeds",
            ));
        }
        if self.test_size == 0 {
            return Err(Error::invalid("test_size", "must be positive"));
        }
        Ok(())
    }

    fn shift(&self, severity: f64, n: usize, seed: u64) -> ShiftConfig {
        let mut cfg = ShiftConfig {
            world: self.world,
            n,
            seed,
            noise_sigma: self.moons_noise,
            ..Default::default()
        };
        match self.world {
            World::Moons => cfg.warp_alpha = severity,
            _ => cfg.translation = Translation::Scalar(severity),
        }
        cfg
    }

    fn anchor_sample(&self, n: usize, seed: u64) -> Dataset {
        match self.world {
            World::Moons => sample_moons(n, self.moons_noise, seed),
            _ => sample_blobs(n, seed),
        }
    }

    fn diagnose_config(&self) -> DiagnoseConfig {
        let variant = if self.variants.contains(&Variant::Mmd) {
            Variant::Mmd
        } else {
            Variant::Ot
        };
        DiagnoseConfig {
            variant: Some(variant),
            ..self.diagnose.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub severity: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub key: RunKey,
    pub abs_delta_r: f64,
    pub proxy_ot: Option<f64>,
    pub proxy_mmd: Option<f64>,
    pub report: DiagnosticReport,
}

/// Per-threshold gating power of one proxy against harm labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub tau: f64,
    pub variant: Variant,
    pub positives: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub world: World,
    pub calibration_ot: Option<ProxyCalibration>,
    pub calibration_mmd: Option<ProxyCalibration>,
    pub records: Vec<SweepRecord>,
    pub rho_ot: Option<f64>,
    pub rho_mmd: Option<f64>,
    pub thresholds: Vec<ThresholdMetrics>,
    /// Reasons an aggregate could not be computed.
    pub flags: Vec<String>,
}

impl SweepResult {
    pub fn rho(&self, variant: Variant) -> Option<f64> {
        match variant {
            Variant::Ot => self.rho_ot,
            Variant::Mmd => self.rho_mmd,
        }
    }

    fn proxies(&self, variant: Variant) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| match variant {
                Variant::Ot => r.proxy_ot,
                Variant::Mmd => r.proxy_mmd,
            })
            .collect()
    }
}

/// One training-and-diagnosis run; the train seed equals the data seed.
fn run_one(spec: &SweepSpec, key: RunKey, test: Option<&Dataset>) -> Result<DiagnosticReport> {
    let (source, target) = make_classification_shift(&spec.shift(key.severity, key.n, key.seed))?;
    let split_spec = SplitSpec {
        seed: key.seed,
        ..spec.split
    };
    let (s_tr, s_va) = split(&source, &split_spec)?;
    let (t_tr, t_va) = split(&target, &split_spec)?;
    let kind = spec.predictor_kind();
    let classes = source.class_count();
    let train = TrainConfig {
        seed: key.seed,
        ..spec.train
    };
    let q = fit(
        kind,
        s_tr.features(),
        &s_tr.targets(),
        classes,
        spec.hidden,
        spec.logit_clip,
        &train,
    )?;
    let qt = fit(
        kind,
        t_tr.features(),
        &t_tr.targets(),
        classes,
        spec.hidden,
        spec.logit_clip,
        &train,
    )?;
    let inputs = DiagnoseInputs {
        q: &q,
        qt: &qt,
        loss: LossSpec::cross_entropy(spec.logit_clip, classes),
        source_train: Labeled::from_dataset(&s_tr),
        source_val: Labeled::from_dataset(&s_va),
        target_train: Labeled::from_dataset(&t_tr),
        target_val: Labeled::from_dataset(&t_va),
        target_labels: true,
        source_test: test.map(Labeled::from_dataset),
    };
    diagnose(&inputs, &spec.diagnose_config())
}

/// `L̂(f_Q̃)·Distance` for the variant's distance.
fn shift_term(report: &DiagnosticReport, variant: Variant) -> Result<f64> {
    let m = &report.measurements;
    let lip =
        m.lipschitz_qt.as_ref().map(|l| l.value).ok_or_else(|| {
            Error::Degenerate("report lacks the target Lipschitz estimate".into())
        })?;
    let distance = match variant {
        Variant::Ot => m.sinkhorn_divergence,
        Variant::Mmd => m
            .mmd
            .ok_or_else(|| Error::Degenerate("report lacks the MMD measurement".into()))?,
    };
    Ok(lip * distance)
}

fn proxy_of(report: &DiagnosticReport, variant: Variant, cal: &ProxyCalibration) -> Result<f64> {
    let m = &report.measurements;
    let lip = m.lipschitz_qt.as_ref().map(|l| l.value).unwrap_or(0.0);
    let distance = if lip == 0.0 {
        0.0
    } else {
        shift_term(report, variant)? / lip
    };
    trace_proxy(m.out_disc, lip, distance, cal)
}

/// Calibrates `ĉ` once on the development runs, freezes it, then runs every
/// `(severity, size, seed)` combination. Runs execute concurrently and are
/// merged in key order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    with_worker_pool(|| run_sweep_inner(spec))?
}

fn run_sweep_inner(spec: &SweepSpec) -> Result<SweepResult> {
    let dev_keys: Vec<RunKey> = spec
        .dev_seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| RunKey {
            severity: spec.severities[i % spec.severities.len()],
            n: spec.dev_size,
            seed,
        })
        .collect();
    let dev_reports: Vec<DiagnosticReport> = dev_keys
        .par_iter()
        .map(|&k| run_one(spec, k, None))
        .collect::<Result<_>>()?;
    let calibrate = |variant: Variant| -> Result<Option<ProxyCalibration>> {
        if !spec.variants.contains(&variant) {
            return Ok(None);
        }
        let runs = dev_keys
            .iter()
            .zip(&dev_reports)
            .map(|(k, r)| {
                Ok(DevRun {
                    id: format!("{:?}-{}-n{}-s{}", spec.world, k.severity, k.n, k.seed)
                        .to_lowercase(),
                    out_disc: r.measurements.out_disc,
                    shift: shift_term(r, variant)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        calibrate_c_hat(&runs).map(Some)
    };
    let calibration_ot = calibrate(Variant::Ot)?;
    let calibration_mmd = calibrate(Variant::Mmd)?;

    let test = spec.anchor_sample(spec.test_size, spec.test_seed);
    let mut keys = Vec::new();
    for &severity in &spec.severities {
        for &n in &spec.sizes {
            for &seed in &spec.seeds {
                keys.push(RunKey { severity, n, seed });
            }
        }
    }
    let reports: Vec<DiagnosticReport> = keys
        .par_iter()
        .map(|&k| run_one(spec, k, Some(&test)))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(keys.len());
    for (key, report) in keys.into_iter().zip(reports) {
        let abs_delta_r = report
            .delta_r_true
            .ok_or_else(|| Error::Degenerate("run is missing its risk change".into()))?;
        let proxy_ot = calibration_ot
            .as_ref()
            .map(|c| proxy_of(&report, Variant::Ot, c))
            .transpose()?;
        let proxy_mmd = calibration_mmd
            .as_ref()
            .map(|c| proxy_of(&report, Variant::Mmd, c))
            .transpose()?;
        records.push(SweepRecord {
            key,
            abs_delta_r,
            proxy_ot,
            proxy_mmd,
            report,
        });
    }

    let mut result = SweepResult {
        world: spec.world,
        calibration_ot,
        calibration_mmd,
        records,
        rho_ot: None,
        rho_mmd: None,
        thresholds: Vec::new(),
        flags: Vec::new(),
    };
    let truth: Vec<f64> = result.records.iter().map(|r| r.abs_delta_r).collect();
    let signed: Vec<f64> = result
        .records
        .iter()
        .map(|r| r.report.delta_r_signed.unwrap_or(0.0))
        .collect();
    let taus = if spec.taus.is_empty() {
        vec![median(&signed)?]
    } else {
        spec.taus.clone()
    };
    for &variant in &spec.variants {
        let Some(proxy) = result.proxies(variant) else {
            continue;
        };
        match spearman_rho(&proxy, &truth) {
            Ok(rho) => match variant {
                Variant::Ot => result.rho_ot = Some(rho),
                Variant::Mmd => result.rho_mmd = Some(rho),
            },
            Err(e) => result
                .flags
                .push(format!("{variant:?} spearman undefined: {e}")),
        }
        for &tau in &taus {
            let labels = label_harmful(&signed, tau).labels;
            let positives = labels.iter().filter(|&&l| l).count();
            let a = auroc(&proxy, &labels);
            let p = auprc(&proxy, &labels);
            let note = a.as_ref().err().or(p.as_ref().err()).map(|e| e.to_string());
            result.thresholds.push(ThresholdMetrics {
                tau,
                variant,
                positives,
                auroc: a.ok(),
                auprc: p.ok(),
                note,
            });
        }
    }
    Ok(result)
}

#[derive(Debug, Serialize)]
struct CsvRow {
    world: String,
    severity: f64,
    n: usize,
    seed: u64,
    variant: Variant,
    delta_r_signed: Option<f64>,
    abs_delta_r: f64,
    g_q_val: f64,
    g_qt_val: f64,
    model_change: f64,
    empirical_shift_penalty: f64,
    label_noise_remainder: f64,
    validation_set_error: f64,
    population_residual: f64,
    mmd_empirical_shift: Option<f64>,
    mmd_population_term: Option<f64>,
    total: f64,
    bound_ratio: Option<f64>,
    out_disc: f64,
    distance: Option<f64>,
    proxy: f64,
}

/// One CSV row per run and variant.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &result.records {
        for (variant, proxy) in [(Variant::Ot, r.proxy_ot), (Variant::Mmd, r.proxy_mmd)] {
            let Some(proxy) = proxy else { continue };
            let rep = &r.report;
            let total = rep.total(variant);
            w.serialize(CsvRow {
                world: format!("{:?}", result.world).to_lowercase(),
                severity: r.key.severity,
                n: r.key.n,
                seed: r.key.seed,
                variant,
                delta_r_signed: rep.delta_r_signed,
                abs_delta_r: r.abs_delta_r,
                g_q_val: rep.g_q_val,
                g_qt_val: rep.g_qt_val,
                model_change: rep.model_change,
                empirical_shift_penalty: rep.empirical_shift_penalty,
                label_noise_remainder: rep.label_noise_remainder,
                validation_set_error: rep.validation_set_error,
                population_residual: rep.population_residual,
                mmd_empirical_shift: rep.mmd_empirical_shift,
                mmd_population_term: rep.mmd_population_term,
                total,
                bound_ratio: if r.abs_delta_r > 0.0 {
                    Some(total / r.abs_delta_r)
                } else {
                    None
                },
                out_disc: rep.measurements.out_disc,
                distance: match variant {
                    Variant::Ot => Some(rep.measurements.sinkhorn_divergence),
                    Variant::Mmd => rep.measurements.mmd,
                },
                proxy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    world: World,
    runs: usize,
    rho_ot: Option<f64>,
    rho_mmd: Option<f64>,
    calibration_ot: &'a Option<ProxyCalibration>,
    calibration_mmd: &'a Option<ProxyCalibration>,
    thresholds: &'a [ThresholdMetrics],
    bound_holds: usize,
    flags: &'a [String],
}

/// Aggregate ρ, AUROC and AUPRC without the per-run reports.
pub fn sweep_summary_json(result: &SweepResult) -> Result<String> {
    let summary = Summary {
        world: result.world,
        runs: result.records.len(),
        rho_ot: result.rho_ot,
        rho_mmd: result.rho_mmd,
        calibration_ot: &result.calibration_ot,
        calibration_mmd: &result.calibration_mmd,
        thresholds: &result.thresholds,
        bound_holds: result
            .records
            .iter()
            .filter(|r| r.report.total_ot >= r.abs_delta_r)
            .count(),
        flags: &result.flags,
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}
