//! Flash-parallelism-aware B+-tree indexing.
//!
//! The crate is organised bottom-up:
//!
//! - [`device`]: batched synchronous ("psync") page I/O over an emulated
//!   multi-channel flash device or a plain file, with a logical latency model.
//! - [`btree`]: the baseline B+-tree with an LRU buffer pool.
//! - [`pio`]: the parallel-I/O B-tree (operation queue, multi-path search,
//!   batch update, append-only leaves with leaf segments).
//! - [`cost`]: analytical latency predictors, calibration and tuning.
//! - [`recovery`]: write-ahead logging and crash recovery for the operation queue.
//! - [`bench`]: workload generation, trace replay and CSV reporting.

pub mod bench;
pub mod btree;
pub mod cost;
pub mod device;
mod error;
pub mod pio;
pub mod recovery;

pub use btree::{BPlusTree, IndexRecord, TreeConfig};
pub use device::{Device, DeviceConfig, DeviceStats, IoKind, PageId};
pub use error::{Error, Result};
pub use pio::{OpFlag, OpqEntry, PioBTree, PioConfig};

/// Index key. `u64::MAX` is reserved as the +∞ sentinel.
pub type Key = u64;

/// Opaque pointer to the data page holding the indexed record.
pub type DataPtr = u64;

/// Largest key that may be stored.
pub const MAX_KEY: Key = u64::MAX - 1;
