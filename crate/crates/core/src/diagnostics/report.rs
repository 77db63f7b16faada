use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::LipschitzEstimate;

pub const SCHEMA_VERSION: &str = "trace-report/1";
pub const GUARANTEE_LABEL: &str = "high-probability under proxy-validity assumption";

/// The JSON schema shipped for [`DiagnosticReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/trace-report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ot,
    Mmd,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Variant::Ot),
            "mmd" => Ok(Variant::Mmd),
            other => Err(Error::invalid(
                "variant",
                format!("unknown variant `{other}`"),
            )),
        }
    }
}

/// Additive terms of the transport form of the bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OtTerms {
    pub g_q_val: f64,
    pub g_qt_val: f64,
    pub model_change: f64,
    pub empirical_shift_penalty: f64,
    pub label_noise_remainder: f64,
    pub validation_set_error: f64,
    pub population_residual: f64,
}

/// Extra inputs of the hybrid MMD form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MmdTerms {
    /// `L̂(f_Q)·c_h·W`, the transport shift of the source model only.
    pub empirical_shift_ot_q: f64,
    pub b_hat: f64,
    pub mmd: f64,
    /// `C_κ·sqrt(ln(2/δ)/n)`.
    pub concentration: f64,
}

/// Raw estimates behind the terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub out_disc: f64,
    pub sinkhorn_divergence: f64,
    pub sinkhorn_convergence_gap: f64,
    pub lipschitz_q: Option<LipschitzEstimate>,
    pub lipschitz_qt: Option<LipschitzEstimate>,
    pub mmd: Option<f64>,
    pub mmd2_signed: Option<f64>,
    pub mmd_bandwidth: Option<f64>,
    pub b_hat: Option<f64>,
    pub b_hat_lambda: Option<f64>,
    pub loss_bound: f64,
    pub l_ell: f64,
    pub worst_observed_loss: f64,
    pub risk_train_q: f64,
    pub risk_val_q: f64,
    pub risk_train_qt: f64,
    pub risk_val_qt: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub m_val: usize,
    pub m_val_target: usize,
    pub dim: usize,
}

/// The assembled bound with every additive term itemized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub schema_version: String,
    pub guarantee: String,
    pub variant: Variant,
    pub g_q_val: f64,
    pub g_qt_val: f64,
    pub model_change: f64,
    pub empirical_shift_penalty: f64,
    pub label_noise_remainder: f64,
    pub validation_set_error: f64,
    pub population_residual: f64,
    pub total_ot: f64,
    pub mmd_empirical_shift: Option<f64>,
    pub mmd_population_term: Option<f64>,
    pub total_mmd: Option<f64>,
    /// `R_P(Q̃) − R_P(Q)`; positive means harm.
    pub delta_r_signed: Option<f64>,
    pub delta_r_true: Option<f64>,
    pub bound_ratio: Option<f64>,
    pub bound_ratio_mmd: Option<f64>,
    pub measurements: Measurements,
    pub config_echo: serde_json::Value,
}

fn check_term(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::Assembly { term, value })
    }
}

impl OtTerms {
    fn checked(&self) -> Result<()> {
        check_term("g_q_val", self.g_q_val)?;
        check_term("g_qt_val", self.g_qt_val)?;
        check_term("model_change", self.model_change)?;
        check_term("empirical_shift_penalty", self.empirical_shift_penalty)?;
        check_term("label_noise_remainder", self.label_noise_remainder)?;
        check_term("validation_set_error", self.validation_set_error)?;
        check_term("population_residual", self.population_residual)?;
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.g_q_val
            + self.g_qt_val
            + self.model_change
            + self.empirical_shift_penalty
            + self.label_noise_remainder
            + self.validation_set_error
            + self.population_residual
    }
}

/// Sums the transport form; every term must be finite and non-negative.
pub fn assemble_ot(terms: &OtTerms) -> Result<DiagnosticReport> {
    terms.checked()?;
    Ok(DiagnosticReport {
        schema_version: SCHEMA_VERSION.into(),
        guarantee: GUARANTEE_LABEL.into(),
        variant: Variant::Ot,
        g_q_val: terms.g_q_val,
        g_qt_val: terms.g_qt_val,
        model_change: terms.model_change,
        empirical_shift_penalty: terms.empirical_shift_penalty,
        label_noise_remainder: terms.label_noise_remainder,
        validation_set_error: terms.validation_set_error,
        population_residual: terms.population_residual,
        total_ot: terms.total(),
        mmd_empirical_shift: None,
        mmd_population_term: None,
        total_mmd: None,
        delta_r_signed: None,
        delta_r_true: None,
        bound_ratio: None,
        bound_ratio_mmd: None,
        measurements: Measurements::default(),
        config_echo: serde_json::Value::Null,
    })
}

/// Sums both forms. The MMD total replaces the transport shift and residual
/// by `L̂(f_Q)·c_h·W + B̂·(MMD + C_κ·sqrt(ln(2/δ)/n))`.
pub fn assemble_mmd(terms: &OtTerms, mmd: &MmdTerms) -> Result<DiagnosticReport> {
    let mut report = assemble_ot(terms)?;
    check_term("mmd_empirical_shift", mmd.empirical_shift_ot_q)?;
    check_term("b_hat", mmd.b_hat)?;
    check_term("mmd", mmd.mmd)?;
    check_term("mmd_concentration", mmd.concentration)?;
    let population = mmd.b_hat * (mmd.mmd + mmd.concentration);
    let total = terms.g_q_val
        + terms.g_qt_val
        + terms.model_change
        + mmd.empirical_shift_ot_q
        + population
        + terms.label_noise_remainder
        + terms.validation_set_error;
    report.variant = Variant::Mmd;
    report.mmd_empirical_shift = Some(mmd.empirical_shift_ot_q);
    report.mmd_population_term = Some(population);
    report.total_mmd = Some(total);
    Ok(report)
}

impl DiagnosticReport {
    /// Attaches the signed risk change; ratios are set only when it is
    /// nonzero.
    pub fn with_delta_r(mut self, signed: f64) -> Self {
        let abs = signed.abs();
        self.delta_r_signed = Some(signed);
        self.delta_r_true = Some(abs);
        if abs > 0.0 {
            self.bound_ratio = Some(self.total_ot / abs);
            self.bound_ratio_mmd = self.total_mmd.map(|t| t / abs);
        }
        self
    }

    pub fn ot_terms(&self) -> OtTerms {
        OtTerms {
            g_q_val: self.g_q_val,
            g_qt_val: self.g_qt_val,
            model_change: self.model_change,
            empirical_shift_penalty: self.empirical_shift_penalty,
            label_noise_remainder: self.label_noise_remainder,
            validation_set_error: self.validation_set_error,
            population_residual: self.population_residual,
        }
    }

    /// The total of the requested form; falls back to the transport total
    /// when the MMD form was not computed.
    pub fn total(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Ot => self.total_ot,
            Variant::Mmd => self.total_mmd.unwrap_or(self.total_ot),
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
