//! Analytic and experimental diagnostics.

pub mod metrics;
pub mod rsd;
pub mod sweep;

pub use metrics::{f1_metrics, ClassMetrics, MetricsRecord};
pub use rsd::{
    rsd_closed_form, rsd_monte_carlo, rsd_procedural, rsd_sweep, unit_grid, ProceduralSim, RsdArgmax, RsdQuery, RsdRow,
    RsdTable,
};
pub use sweep::{
    condition_noise_curve, condition_scores, deletion_ratio_sweep, noise_at_fraction, Condition, ConditionOutcome,
    DeletionRow, ExperimentConfig,
};
