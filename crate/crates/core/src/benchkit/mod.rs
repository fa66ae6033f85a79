//! Benchmark harness: dataset adapters, controlled variants, metrics and the
//! runner that produces per-sample traces and aggregated reports.

pub mod dataset;
pub mod metrics;
pub mod runner;
pub mod variants;

pub use dataset::{load_dataset, parse_dataset, write_canonical, BenchSample, DatasetFormat, Session, Turn};
pub use metrics::{metric_bleu1, metric_f1, normalize_answer, simplify_answer, Simplified};
pub use runner::{read_trace, run_benchmark, write_trace, Aggregate, MetricReport, RunOptions, SampleTokens, TraceRecord};
pub use variants::{build_position_variant, build_scale_variant, session_pool, Position};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("sample `{sample}`: field `{field}`: {message}")]
    Schema { sample: String, field: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("variant error: {0}")]
    Variant(String),
}
