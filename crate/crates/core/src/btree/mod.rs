//! Baseline B+-tree with an LRU buffer pool.

mod bulk;
pub mod node;
mod pool;
pub(crate) mod rebalance;
pub mod superblock;
mod tree;

pub(crate) use bulk::{build_internal_levels, fill_target, group_sizes, write_all};
pub use node::{IndexRecord, InternalNode, LeafNode};
pub use pool::BufferPool;
pub use superblock::{IndexKind, Superblock, SUPERBLOCK_PAGE};
pub use tree::BPlusTree;

use crate::{Error, Result};

/// Node geometry shared by both tree variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    /// F: maximum pointers per internal node.
    pub fanout: usize,
    /// Records per leaf page.
    pub leaf_capacity: usize,
    /// Buffer pool capacity in pages (M).
    pub pool_pages: usize,
}

impl TreeConfig {
    /// Largest fanout for the page size, with `F - 1` records per leaf page.
    pub fn for_page_size(page_size: usize) -> Self {
        let fanout = node::max_fanout(page_size);
        TreeConfig {
            fanout,
            leaf_capacity: fanout - 1,
            pool_pages: 1024,
        }
    }

    /// The small fixture geometry: F = 4, four records per leaf.
    pub fn small(fanout: usize, leaf_capacity: usize) -> Self {
        TreeConfig {
            fanout,
            leaf_capacity,
            pool_pages: 0,
        }
    }

    pub fn with_pool_pages(mut self, pages: usize) -> Self {
        self.pool_pages = pages;
        self
    }

    pub fn min_pointers(&self) -> usize {
        self.fanout.div_ceil(2)
    }

    pub fn min_leaf(&self) -> usize {
        self.leaf_capacity / 2
    }

    pub fn validate(&self, page_size: usize) -> Result<()> {
        if self.fanout < 3 || self.fanout > node::max_fanout(page_size) {
            return Err(Error::Config(format!(
                "fanout {} outside [3, {}]",
                self.fanout,
                node::max_fanout(page_size)
            )));
        }
        if self.leaf_capacity < 2 || self.leaf_capacity > node::max_leaf_records(page_size) {
            return Err(Error::Config(format!(
                "leaf capacity {} outside [2, {}]",
                self.leaf_capacity,
                node::max_leaf_records(page_size)
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_sorted_unique(records: &[IndexRecord]) -> Result<()> {
    if let Some(w) = records.windows(2).find(|w| w[0].key >= w[1].key) {
        return Err(Error::InvalidInput(format!(
            "bulk input not sorted and duplicate-free at key {}",
            w[1].key
        )));
    }
    if records.last().is_some_and(|r| r.key > crate::MAX_KEY) {
        return Err(Error::InvalidInput("key u64::MAX is reserved".into()));
    }
    Ok(())
}
