//! Trajectory metrics, scenario runs and analysis outputs.

pub mod analysis;
pub mod metrics;
pub mod scenario;

pub use analysis::{embed_online_params, embed_sessions, residual_history, residual_history_csv, Pca, ResidualRecord};
pub use metrics::{compute_ate, compute_rte, AteResult, ErrorStats, RteResult, Trajectory};
pub use scenario::{evaluate, run_scenario, MetricsReport, ScenarioRun};
