//! Dataset loading, splitting and evaluation metrics.

mod dataset;
pub mod metrics;

pub use dataset::*;
pub use metrics::{evaluate, evaluate_metric, predict, Metric, MetricReport};
