//! Rank and gating metrics, the seeded sweep harness, the constructed gate
//! analog and greedy batch selection.

mod gate;
mod metrics;
mod selection;
mod sweep;

pub use gate::{
    constructed_gate_setup, descending_order, evaluate_gate, GateCandidate, GateMetric, GateReport,
    GateRow, GateSetup, GateSpec, SCORE_COLUMNS,
};
pub use metrics::{
    auprc, auroc, auroc_trapezoid, average_ranks, label_harmful, spearman_rho, GateLabeling,
};
pub use selection::{
    select_batch, select_rounds, BatchSelection, SelectionConfig, SelectionPolicy,
};
pub use sweep::{
    run_sweep, sweep_summary_json, with_worker_pool, write_sweep_csv, RunKey, SweepRecord,
    SweepResult, SweepSpec, ThresholdMetrics, THREADS_ENV,
};
