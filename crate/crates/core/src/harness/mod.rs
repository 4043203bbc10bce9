//! Scenario runner, metrics, and result files.

pub mod config;
pub mod emit;
pub mod metrics;
pub mod run;
pub mod summary;
pub mod sweep;

pub use config::{Pooling, RunConfig};
pub use emit::emit;
pub use metrics::{improvement_rate, Family, MetricSeries};
pub use run::{run_repeated, run_scenario, RunOutput};
pub use summary::{summarize, ImprovementSummary, RunSummary};
