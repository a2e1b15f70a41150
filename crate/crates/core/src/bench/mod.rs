//! Memory accounting, throughput and ablation sweeps.

mod ablation;
mod gradcheck;
mod memory;
mod run;
mod svg;
mod throughput;

pub use ablation::{median, run_ablation, Ablation, AblationReport, AblationRow, GridPoint, RunMetrics, SummaryRow};
pub use gradcheck::{pipeline_grad_check, PipelineCheck, GRAD_CHECK_EPS};
pub use memory::{account_memory, plan_iteration, simulate, MemoryConfig, MemoryReport, PlannedNode, Stage};
pub use run::{run_config, run_on, RunOutcome, TAIL_WINDOW};
pub use svg::{downsample, line_chart};
pub use throughput::{host_descriptor, measure_throughput, ThroughputReport, MIN_TIMED, MIN_WARMUP};
