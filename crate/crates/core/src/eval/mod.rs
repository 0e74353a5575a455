//! Ranking metrics, relative improvement and latency measurement.

mod latency;
mod metrics;
mod report;

pub use latency::{latency_bench, latency_compare, LatencyConfig, LatencyReport};
pub use metrics::{
    average_precision, evaluate, mean_average_precision, mean_reciprocal_rank, precision_at_1, reciprocal_rank,
    relative_improvement, MetricReport, QuestionMetrics, RankedCandidate, RankedList,
};
pub use report::{BaselineComparison, MetricSummary, Report};
