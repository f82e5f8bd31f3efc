//! Workload generation, trace replay against either index, parameter
//! sweeps and CSV reporting.

mod replay;
mod sweep;
mod trace;
mod workload;

pub use replay::{op_ptr, replay, Index, IndexKind, OpStat, ReplayOptions, RunReport};
pub use sweep::{sweep, to_csv, Backend, BenchConfig, Dimension, SweepRow, CSV_HEADER};
pub use trace::{format_trace, parse_trace, TraceOp};
pub use workload::{generate, initial_keys, WorkloadKind, WorkloadSpec, RANGES_PER_SIZE, RANGE_SIZES};
