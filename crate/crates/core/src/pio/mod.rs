//! The parallel-I/O B-tree: an operation queue in front of a B+-tree whose
//! searches and batched updates descend level by level with one psync call
//! per level, over append-only leaves made of several leaf segments.

mod entry;
pub mod leaf;
mod lsmap;
mod opq;
mod tree;

pub use entry::{apply, shrink, OpFlag, OpqEntry, MAX_PTR};
pub use leaf::PioLeaf;
pub use lsmap::LsMap;
pub use opq::{OpQueue, Slot};
pub use tree::{LeafView, LevelProfile, PioBTree};

use crate::btree::TreeConfig;
use crate::{Error, Key, Result};

/// PIO B-tree parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PioConfig {
    /// Internal-node geometry; `leaf_capacity` is the entries per leaf segment.
    pub tree: TreeConfig,
    /// L: leaf size in leaf-segment pages.
    pub leaf_segments: u32,
    /// O: operation queue size in pages.
    pub opq_pages: usize,
    /// Maximum I/O requests per psync call.
    pub pio_max: usize,
    /// Appends between sorts of the operation queue.
    pub speriod: usize,
    /// Entries per partial flush.
    pub bcnt: usize,
}

impl PioConfig {
    pub fn for_page_size(page_size: usize) -> Self {
        PioConfig {
            tree: TreeConfig::for_page_size(page_size),
            leaf_segments: 1,
            opq_pages: 16,
            pio_max: 64,
            speriod: 5000,
            bcnt: 5000,
        }
    }

    pub fn with_tree(tree: TreeConfig) -> Self {
        PioConfig {
            tree,
            ..Self::for_page_size(4096)
        }
    }

    /// Queue capacity in entries: `O * (F - 1)`.
    pub fn opq_capacity(&self) -> usize {
        self.opq_pages * (self.tree.fanout - 1)
    }

    /// `bcnt` capped at the queue capacity.
    pub fn effective_bcnt(&self) -> usize {
        self.bcnt.min(self.opq_capacity())
    }

    /// C: entries one leaf can hold.
    pub fn leaf_entries(&self) -> usize {
        self.leaf_segments as usize * self.tree.leaf_capacity
    }

    pub fn min_leaf(&self) -> usize {
        self.leaf_entries() / 2
    }

    pub fn validate(&self, page_size: usize) -> Result<()> {
        self.tree.validate(page_size)?;
        if self.leaf_segments == 0 || self.leaf_segments > 255 {
            return Err(Error::Config(format!(
                "leaf segments {} outside [1, 255]",
                self.leaf_segments
            )));
        }
        for (name, v) in [
            ("opq pages", self.opq_pages),
            ("piomax", self.pio_max),
            ("speriod", self.speriod),
            ("bcnt", self.bcnt),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.leaf_entries() < 3 {
            return Err(Error::Config("a leaf must hold at least 3 entries".into()));
        }
        Ok(())
    }
}

/// Child-pointer predicate: does any of the sorted keys fall in `[lo, hi)`?
/// `None` bounds stand for minus and plus infinity.
pub fn check_search_needed(lo: Option<Key>, hi: Option<Key>, keys: &[Key]) -> bool {
    let i = lo.map_or(0, |lo| keys.partition_point(|&s| s < lo));
    i < keys.len() && hi.is_none_or(|hi| keys[i] < hi)
}

#[cfg(test)]
mod tests;
