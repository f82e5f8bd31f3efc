//! Write-ahead logging and crash recovery for the operation queue.

mod crash;
mod log;

pub use crash::{CrashInjector, CrashPoint};
pub use log::{read_log, FileLog, LogRecord, LogStore, Lsn, MemLog, TxnId, Wal, AUTO_COMMIT};
mod recover;

pub use recover::RecoveryReport;
