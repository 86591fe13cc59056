//! Benchmark harness: datasets, the He baseline initializer, and the
//! transfer experiments (depth sweep, width sweep, component ablation).

mod dataset;
mod init;
mod sweep;

pub use dataset::{
    from_idx, synthetic, Dataset, IdxSpec, Normalization, Split, SyntheticSpec,
};
pub use init::he_init;
pub use sweep::{
    cell_config, report_csv, run_component_ablation, run_depth_sweep, run_width_sweep,
    write_report, Budgets, ExperimentSpec, Method, MetricsRow, REPORT_HEADER,
};
