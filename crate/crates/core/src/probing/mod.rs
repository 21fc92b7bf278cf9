//! Representation probes: ridge regression from embeddings to market
//! quantities, canonical correlation between embedding spaces, and a
//! budget-matched comparison of semantic fusion mechanisms.

pub mod cca;
pub mod fusion;
pub mod linalg;
pub mod probe;
pub mod study;

pub use cca::{cca_avg, CcaError, CcaReport};
pub use fusion::{
    run_fusion_study, FusionError, FusionMechanism, FusionReport, FusionStudyConfig,
};
pub use linalg::{LinalgError, Pca};
pub use probe::{linear_probe, ProbeError, ProbeReport};
pub use study::{
    run_probe_study, write_probe_reports, ProbeStudyConfig, ProbeStudyError, ProbeStudyReport,
};
