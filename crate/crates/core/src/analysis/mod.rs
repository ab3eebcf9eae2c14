//! Evaluation and diagnostics: classification metrics, CCA between
//! representations, grouped Shapley attribution and the flipped-case
//! tendency study.

pub mod cca;
pub mod metrics;
pub mod shapley;
pub mod tendency;

pub use cca::{cca, CcaResult, DEFAULT_RIDGE};
pub use metrics::{bacc, macro_f1, ConfusionCounts, Metrics};
pub use shapley::{shapley_group, GroupAttribution};
pub use tendency::{tendency_analysis, TendencyCounts, TendencyReport};
