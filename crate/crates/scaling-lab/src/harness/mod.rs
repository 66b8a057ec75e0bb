//! Sweep configuration, execution, persistence and plot data.

mod config;
mod plotdata;
mod sweep;

pub use config::{GridPoint, Grid, Scaled, SeKind, SolverKind, SweepConfig};
pub use plotdata::{emit_plotdata, to_csv, write_plotdata, PlotKind, PlotRow, CSV_HEADER};
pub use sweep::{
    parse_record, read_records, resolve_workers, run_sweep, run_sweep_with, task_seed, ResultRecord, SweepSummary, Task,
    SCHEMA_VERSION,
};
