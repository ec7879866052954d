//! Gaussianity diagnostics for embeddings: norm concentration, coordinate
//! normality tests, negative-pair cosines, whitening and the likelihood
//! correlation check.

mod normality;
mod report;
mod whitening;

pub use normality::{
    anderson_darling, dagostino_pearson, normality_tests, AndersonDarling, DagostinoPearson, NormalityTest,
    AD_CRITICAL_5PCT, DP_ALPHA,
};
pub use report::{
    coordinate_report, coordinate_tests, cv_norms, negative_cosines, CoordinateTests, DiagnosticsReport,
    NegativeCosines, ReportExtras, VerdictRule, MAX_NEGATIVE_PAIRS, MIN_REPORT_ROWS,
};
pub use whitening::{likelihood_correlation, whiten, Whitened};
