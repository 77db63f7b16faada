//! The single on-disk run configuration. Every section has defaults and
//! rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{split, Dataset, ShiftConfig, SplitSpec};
use crate::diagnostics::{
    diagnose, DiagnoseConfig, DiagnoseInputs, DiagnosticReport, Labeled, Variant,
};
use crate::error::{write_text, Error, Result};
use crate::evaluation::{GateSpec, SelectionConfig, SweepSpec};
use crate::models::{
    LossSpec, Predictor, PredictorKind, RidgeCheckConfig, TrainConfig, DEFAULT_HIDDEN,
    DEFAULT_LOGIT_CLIP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: PredictorKind,
    pub hidden: usize,
    pub logit_clip: f64,
    /// Overrides the loss bound `M`; `B + ln C` for cross-entropy when unset.
    pub loss_bound: Option<f64>,
    /// Whether target validation labels may be used; pseudo-labels from the
    /// source model otherwise.
    pub target_labels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: PredictorKind::LogisticLinear,
            hidden: DEFAULT_HIDDEN,
            logit_clip: DEFAULT_LOGIT_CLIP,
            loss_bound: None,
            target_labels: true,
        }
    }
}

/// Input and output locations. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Labeled anchor sample for the true risk change.
    pub test: Option<PathBuf>,
    pub q_model: Option<PathBuf>,
    pub qt_model: Option<PathBuf>,
    pub reference_model: Option<PathBuf>,
    pub candidate_models: Vec<PathBuf>,
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::invalid(
                "format",
                format!("unknown format `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: OutputFormat,
    pub shift: ShiftConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diagnose: DiagnoseConfig,
    pub sweep: SweepSpec,
    pub gate: GateSpec,
    pub ridge: RidgeCheckConfig,
    pub selection: SelectionConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Parses a configuration; malformed or unknown keys are usage errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    /// Points every single-run seed at `seed`. Sweep seed lists are left
    /// alone.
    pub fn set_seed(&mut self, seed: u64) {
        self.shift.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.diagnose.transport.seed = seed;
        self.gate.seed = seed;
        self.ridge.seed = seed;
    }

    pub fn set_variant(&mut self, variant: Variant) {
        self.diagnose.variant = Some(variant);
        self.sweep.variants = vec![variant];
    }

    /// The loss of `p`, with the configured bound override applied.
    pub fn loss_for(&self, p: &Predictor) -> LossSpec {
        let loss = LossSpec::for_predictor(p);
        match self.model.loss_bound {
            Some(m) => loss.with_bound(m),
            None => loss,
        }
    }

    /// Splits both samples per `split`, then runs the diagnostic. `test` is
    /// the labeled anchor sample for the true risk change.
    pub fn diagnose_datasets(
        &self,
        source: &Dataset,
        target: &Dataset,
        q: &Predictor,
        qt: &Predictor,
        test: Option<&Dataset>,
    ) -> Result<DiagnosticReport> {
        let (s_tr, s_va) = split(source, &self.split)?;
        let (t_tr, t_va) = split(target, &self.split)?;
        let inputs = DiagnoseInputs {
            q,
            qt,
            loss: self.loss_for(q),
            source_train: Labeled::from_dataset(&s_tr),
            source_val: Labeled::from_dataset(&s_va),
            target_train: Labeled::from_dataset(&t_tr),
            target_val: Labeled::from_dataset(&t_va),
            target_labels: self.model.target_labels,
            source_test: test.map(Labeled::from_dataset),
        };
        diagnose(&inputs, &self.diagnose)
    }
}
