//! Latency model, event simulation, parameter sweeps and optimization
//! ablations for semaquery predict operators.

pub mod ablation;
pub mod latency;
pub mod measure;
pub mod sim;
pub mod sweep;

pub use ablation::{run_opt_ablation, AblationRow, Workload};
pub use latency::LatencyModel;
pub use measure::measure_mock;
pub use sim::simulate;
pub use sweep::{sweep, write_csv, SweepPoint};
