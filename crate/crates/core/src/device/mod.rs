//! Batched synchronous page I/O ("psync").
//!
//! A psync call submits an array of page requests and blocks until every
//! request has completed. The emulated device charges each batch through a
//! [`LatencyModel`] and accumulates the result as logical time in
//! [`DeviceStats`]; nothing sleeps.

mod alloc;
mod config;
mod latency;
mod store;

use std::fmt;
use std::path::Path;

pub use config::DeviceConfig;
pub use latency::{default_size_curve, LatencyModel};
pub use store::{FileStore, MemStore, PageStore};

use crate::{Error, Result};
use alloc::Allocator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl PageId {
    pub const NIL: PageId = PageId(u64::MAX);

    pub fn is_nil(self) -> bool {
        self == Self::NIL
    }

    pub fn offset(self, n: u64) -> PageId {
        PageId(self.0 + n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoKind {
    Read,
    Write,
}

/// One element of a psync batch: a read or write of `pages` contiguous
/// pages starting at `page`.
#[derive(Debug, Clone, PartialEq)]
pub struct IoRequest {
    pub kind: IoKind,
    pub page: PageId,
    pub pages: u32,
    /// Payload for writes; empty for reads.
    pub data: Vec<u8>,
}

impl IoRequest {
    pub fn read(page: PageId) -> Self {
        Self::read_extent(page, 1)
    }

    pub fn read_extent(page: PageId, pages: u32) -> Self {
        IoRequest {
            kind: IoKind::Read,
            page,
            pages,
            data: Vec::new(),
        }
    }

    /// Write of `data`, which must be a whole number of pages.
    pub fn write(page: PageId, data: Vec<u8>) -> Self {
        IoRequest {
            kind: IoKind::Write,
            page,
            pages: 0,
            data,
        }
    }
}

/// An ordered group of requests submitted and completed as a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct IoBatch {
    requests: Vec<IoRequest>,
    mixed: bool,
}

impl IoBatch {
    /// A homogeneous batch; every request must have the same kind.
    pub fn new(requests: Vec<IoRequest>) -> Result<Self> {
        if requests.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let kind = requests[0].kind;
        if requests.iter().any(|r| r.kind != kind) {
            return Err(Error::Usage("heterogeneous batch not flagged as mixed".into()));
        }
        Ok(IoBatch { requests, mixed: false })
    }

    /// A batch explicitly flagged as interleaving reads and writes.
    pub fn mixed(requests: Vec<IoRequest>) -> Result<Self> {
        if requests.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        Ok(IoBatch { requests, mixed: true })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn is_mixed(&self) -> bool {
        self.mixed
    }

    pub fn requests(&self) -> &[IoRequest] {
        &self.requests
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeviceStats {
    pub pages_read: u64,
    pub pages_written: u64,
    pub read_batches: u64,
    pub write_batches: u64,
    pub simulated_time_us: f64,
}

impl DeviceStats {
    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &DeviceStats) -> DeviceStats {
        DeviceStats {
            pages_read: self.pages_read - earlier.pages_read,
            pages_written: self.pages_written - earlier.pages_written,
            read_batches: self.read_batches - earlier.read_batches,
            write_batches: self.write_batches - earlier.write_batches,
            simulated_time_us: self.simulated_time_us - earlier.simulated_time_us,
        }
    }
}

/// A page device with psync batch I/O, page allocation and I/O accounting.
pub struct Device {
    config: DeviceConfig,
    model: LatencyModel,
    store: Box<dyn PageStore>,
    alloc: Allocator,
    stats: DeviceStats,
    write_budget: Option<u64>,
}

impl fmt::Debug for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Device")
            .field("config", &self.config)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Device {
    pub fn new(config: DeviceConfig, store: Box<dyn PageStore>) -> Result<Self> {
        config.validate()?;
        Ok(Device {
            model: config.latency_model(),
            alloc: Allocator::new(config.page_count),
            store,
            config,
            stats: DeviceStats::default(),
            write_budget: None,
        })
    }

    /// Emulated flash device backed by memory.
    pub fn emulated(config: DeviceConfig) -> Result<Self> {
        Self::new(config, Box::new(MemStore::new()))
    }

    /// Device whose pages live in a single data file.
    pub fn file(config: DeviceConfig, path: impl AsRef<Path>) -> Result<Self> {
        let store = FileStore::open(path, config.page_size)?;
        Self::new(config, Box::new(store))
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn latency_model(&self) -> &LatencyModel {
        &self.model
    }

    pub fn page_size(&self) -> usize {
        self.config.page_size
    }

    pub fn stats(&self) -> DeviceStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = DeviceStats::default();
    }

    pub fn batch_cost(&self, batch_size: usize, kind: IoKind, io_unit_pages: u32, mixed: bool) -> f64 {
        self.model.batch_cost(batch_size, kind, io_unit_pages, mixed)
    }

    pub fn alloc_page(&mut self) -> Result<PageId> {
        self.alloc.alloc()
    }

    pub fn alloc_extent(&mut self, pages: u32) -> Result<PageId> {
        self.alloc.alloc_extent(u64::from(pages.max(1)))
    }

    pub fn free_page(&mut self, page: PageId) -> Result<()> {
        self.alloc.free(page)
    }

    pub fn free_extent(&mut self, start: PageId, pages: u32) -> Result<()> {
        for i in 0..u64::from(pages) {
            self.alloc.free(start.offset(i))?;
        }
        Ok(())
    }

    pub fn is_allocated(&self, page: PageId) -> bool {
        self.alloc.is_allocated(page.0)
    }

    pub fn allocated_pages(&self) -> u64 {
        self.alloc.allocated_count()
    }

    /// Replaces the allocation map, e.g. after walking a recovered tree.
    pub fn rebuild_allocation(&mut self, pages: impl IntoIterator<Item = PageId>) {
        self.alloc.rebuild(pages.into_iter().map(|p| p.0));
    }

    /// Makes the device fail with [`Error::Crashed`] once `pages` more page
    /// writes have been applied. `None` disarms it.
    pub fn set_write_budget(&mut self, pages: Option<u64>) {
        self.write_budget = pages;
    }

    /// Reads single pages; results are aligned with `pages`.
    pub fn psync_read(&mut self, pages: &[PageId]) -> Result<Vec<Vec<u8>>> {
        let reqs = pages.iter().map(|&p| IoRequest::read(p)).collect();
        self.submit(IoBatch::new(reqs)?)
    }

    /// Reads multi-page extents `(start, pages)` in one batch.
    pub fn psync_read_extents(&mut self, extents: &[(PageId, u32)]) -> Result<Vec<Vec<u8>>> {
        let reqs = extents.iter().map(|&(p, n)| IoRequest::read_extent(p, n)).collect();
        self.submit(IoBatch::new(reqs)?)
    }

    /// Writes single pages; each buffer must be exactly one page.
    pub fn psync_write(&mut self, writes: &[(PageId, &[u8])]) -> Result<()> {
        if let Some((p, b)) = writes.iter().find(|(_, b)| b.len() != self.config.page_size) {
            return Err(Error::Usage(format!(
                "write to page {p} has {} bytes, page size is {}",
                b.len(),
                self.config.page_size
            )));
        }
        self.psync_write_extents(writes)
    }

    /// Writes whole-page extents; buffer lengths must be page multiples.
    pub fn psync_write_extents(&mut self, writes: &[(PageId, &[u8])]) -> Result<()> {
        let reqs = writes.iter().map(|&(p, b)| IoRequest::write(p, b.to_vec())).collect();
        self.submit(IoBatch::new(reqs)?).map(|_| ())
    }

    /// Submits a batch and blocks until every request completes. Read
    /// results are returned in request order; writes yield empty buffers.
    pub fn submit(&mut self, batch: IoBatch) -> Result<Vec<Vec<u8>>> {
        if batch.len() > self.config.max_batch {
            return Err(Error::Usage(format!(
                "batch of {} exceeds max batch {}",
                batch.len(),
                self.config.max_batch
            )));
        }
        let page_size = self.config.page_size;
        let mut unit = 1u32;
        let (mut reads, mut writes) = (0usize, 0usize);
        for r in batch.requests() {
            let pages = match r.kind {
                IoKind::Read => {
                    reads += 1;
                    r.pages
                }
                IoKind::Write => {
                    writes += 1;
                    if r.data.is_empty() || r.data.len() % page_size != 0 {
                        return Err(Error::Usage(format!(
                            "write to page {} has {} bytes, not a page multiple",
                            r.page,
                            r.data.len()
                        )));
                    }
                    (r.data.len() / page_size) as u32
                }
            };
            if pages == 0 {
                return Err(Error::Usage("zero-length request".into()));
            }
            for i in 0..u64::from(pages) {
                if !self.alloc.is_allocated(r.page.0 + i) {
                    return Err(Error::Unallocated(r.page.offset(i)));
                }
            }
            unit = unit.max(pages);
        }

        let mut results = Vec::with_capacity(batch.len());
        let mut pages_written = 0u64;
        for r in batch.requests() {
            match r.kind {
                IoKind::Read => {
                    let mut buf = vec![0u8; r.pages as usize * page_size];
                    for (i, chunk) in buf.chunks_mut(page_size).enumerate() {
                        self.store.read_page(r.page.0 + i as u64, chunk)?;
                    }
                    self.stats.pages_read += u64::from(r.pages);
                    results.push(buf);
                }
                IoKind::Write => {
                    for (i, chunk) in r.data.chunks(page_size).enumerate() {
                        if let Some(budget) = self.write_budget.as_mut() {
                            if *budget == 0 {
                                self.stats.pages_written += pages_written;
                                return Err(Error::Crashed("device write budget".into()));
                            }
                            *budget -= 1;
                        }
                        self.store.write_page(r.page.0 + i as u64, chunk)?;
                        pages_written += 1;
                    }
                    results.push(Vec::new());
                }
            }
        }
        if writes > 0 {
            self.store.sync()?;
        }
        self.stats.pages_written += pages_written;
        if reads > 0 {
            self.stats.read_batches += 1;
        }
        if writes > 0 {
            self.stats.write_batches += 1;
        }
        let n = batch.len();
        let base = (reads as f64 * self.model.read_latency_us + writes as f64 * self.model.write_latency_us) / n as f64;
        self.stats.simulated_time_us += self.model.batch_cost_with_base(n, base, unit, batch.is_mixed());
        Ok(results)
    }
}
