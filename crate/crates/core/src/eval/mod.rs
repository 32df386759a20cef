//! Cross-validation protocol, metrics and statistics.

mod folds;
mod metrics;
mod report;
mod search;
mod wilcoxon;

pub use folds::{
    load_manifest, read_manifest, stratified_folds, stratified_indices, write_manifest, Fold, FoldPlan, SubjectRecord,
};
pub use metrics::{auc, average_precision, compute_metrics, threshold_metrics, Metrics, ThresholdMetrics};
pub use report::{aggregate, write_report_json, write_summary_csv, MetricsReport, ModelReport, RunMetrics};
pub use search::{random_search, Configuration, ParamDist, SearchResult, SearchSpace, Trial};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};
