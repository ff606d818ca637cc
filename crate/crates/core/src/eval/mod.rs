//! Evaluation: the per-frame pipeline, the accuracy metric and benchmarks.

pub mod accuracy;
pub mod bench;
pub mod pipeline;
pub mod report;

pub use accuracy::{accuracy, matched_correct, AccuracyResult, DEFAULT_TOLERANCE_DEG};
pub use bench::{run_benchmark, BenchmarkConfig, BenchmarkReport, BenchmarkSummary, ScenarioResult};
pub use report::write_report;
pub use pipeline::{
    run_pipeline, ArrayGeometry, CovarianceSource, Gating, OracleAssociation, PipelineConfig, RunDiagnostics,
    RunOptions, RunOutput,
};
