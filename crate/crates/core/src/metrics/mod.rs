//! AUROC, bootstrap confidence intervals and paired significance tests.

mod auroc;
mod stats;

pub use auroc::{auroc, RankedScores};
pub use stats::{
    bootstrap_ci, compare_reports, mean_auroc, paired_ttest, student_t_two_tailed,
    ComparisonResult, EvalReport, MeanAuroc, MIN_BOOTSTRAP, REPORT_SCHEMA_VERSION,
    SIGNIFICANCE_LEVEL,
};
