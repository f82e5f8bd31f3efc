use std::collections::BTreeSet;

use super::PageId;
use crate::{Error, Result};

/// Lowest-free-id page allocator. Every id at or above `next` is free;
/// `free` holds the freed ids below it.
#[derive(Debug, Clone, Default)]
pub(crate) struct Allocator {
    next: u64,
    free: BTreeSet<u64>,
    capacity: u64,
}

impl Allocator {
    pub fn new(capacity: u64) -> Self {
        Allocator {
            next: 0,
            free: BTreeSet::new(),
            capacity,
        }
    }

    pub fn is_allocated(&self, page: u64) -> bool {
        page < self.next && !self.free.contains(&page)
    }

    pub fn allocated_count(&self) -> u64 {
        self.next - self.free.len() as u64
    }

    pub fn alloc(&mut self) -> Result<PageId> {
        self.alloc_extent(1)
    }

    /// Allocates `n` contiguous pages at the lowest possible start.
    pub fn alloc_extent(&mut self, n: u64) -> Result<PageId> {
        assert!(n >= 1);
        let mut run_start = None;
        let mut run_len = 0u64;
        let mut prev = None;
        for &id in &self.free {
            if prev.map(|p: u64| p + 1) == Some(id) {
                run_len += 1;
            } else {
                run_start = Some(id);
                run_len = 1;
            }
            prev = Some(id);
            if run_len == n {
                let start = run_start.unwrap();
                for p in start..start + n {
                    self.free.remove(&p);
                }
                return Ok(PageId(start));
            }
        }
        // A free run touching the high-water mark can be extended past it.
        let start = match (run_start, prev) {
            (Some(s), Some(last)) if last + 1 == self.next => s,
            _ => self.next,
        };
        let end = start + n;
        if end > self.capacity {
            return Err(Error::OutOfSpace);
        }
        for p in start..self.next.min(end) {
            self.free.remove(&p);
        }
        self.next = self.next.max(end);
        Ok(PageId(start))
    }

    pub fn free(&mut self, page: PageId) -> Result<()> {
        if !self.is_allocated(page.0) {
            return Err(Error::DoubleFree(page));
        }
        if page.0 + 1 == self.next {
            self.next -= 1;
            while self.next > 0 && self.free.remove(&(self.next - 1)) {
                self.next -= 1;
            }
        } else {
            self.free.insert(page.0);
        }
        Ok(())
    }

    /// Resets the allocation state to exactly `pages`.
    pub fn rebuild(&mut self, pages: impl IntoIterator<Item = u64>) {
        let used: BTreeSet<u64> = pages.into_iter().collect();
        self.next = used.iter().next_back().map_or(0, |m| m + 1);
        self.free = (0..self.next).filter(|p| !used.contains(p)).collect();
    }
}
