//! Per-feature acceptance tests applied to sampled features as they arrive.

pub mod scatter;
pub mod supervised;
pub mod wilcoxon;

pub use scatter::{feature_score, scatter, subset_score, ScatterPair, ScatterVariant};
pub use supervised::{criterion1, criterion2, supervised_select, SupervisedConfig, TestSign};
pub use wilcoxon::{wilcoxon_filter, wilcoxon_test, FilterDecision, WilcoxonResult};
