//! Benchmark harness: corpus model and generator, offline and online
//! metrics, and the virtual-clock corpus replay.

pub mod activity;
pub mod bench;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod report;

pub use bench::{run_bench, run_bench_async, spoken_turn};
pub use corpus::{bundled_corpus, generate_corpus, load_corpus, save_corpus, validate_corpus, BenchmarkCase};
pub use error::{HarnessError, Result};
pub use report::MetricsReport;
