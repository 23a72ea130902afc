//! Scoring methods against the Keep-All reference: Recall@K, unintended
//! ROC-AUC, alignment error and relative degradation.

mod metrics;
mod report;
mod runner;

pub use metrics::{alignment_error, recall_at_k, relative_degradation, roc_auc};
pub use report::{render_summary, summarize, trace_rows, write_method_artifacts, write_run, SummaryRow, TraceRow};
pub use runner::{
    prepare_reference, run_benchmark, run_method, run_methods, BenchmarkConfig, BenchmarkData, MethodRun, Reference,
    VersionMetrics,
};
