use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::device::{Device, PageId};
use crate::Result;

#[derive(Debug)]
struct Frame {
    data: Arc<Vec<u8>>,
    pages: usize,
    dirty: bool,
    tick: u64,
}

/// LRU buffer pool over device pages with write-back of dirty frames.
///
/// Capacity is counted in pages; a frame may cover a multi-page extent.
/// Misses are served by single-page psync reads, or by one batched read
/// for [`BufferPool::get_many`].
#[derive(Debug, Default)]
pub struct BufferPool {
    capacity: usize,
    used: usize,
    frames: HashMap<PageId, Frame>,
    lru: BTreeMap<u64, PageId>,
    tick: u64,
    hits: u64,
    misses: u64,
}

impl BufferPool {
    pub fn new(capacity: usize) -> Self {
        BufferPool {
            capacity,
            ..Default::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn resident_pages(&self) -> usize {
        self.used
    }

    pub fn contains(&self, page: PageId) -> bool {
        self.frames.contains_key(&page)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn dirty_pages(&self) -> usize {
        self.frames.values().filter(|f| f.dirty).map(|f| f.pages).sum()
    }

    fn touch(&mut self, page: PageId) -> Option<Arc<Vec<u8>>> {
        self.tick += 1;
        let tick = self.tick;
        let frame = self.frames.get_mut(&page)?;
        self.lru.remove(&frame.tick);
        frame.tick = tick;
        self.lru.insert(tick, page);
        Some(frame.data.clone())
    }

    /// Read-through lookup of a single page.
    pub fn get(&mut self, dev: &mut Device, page: PageId) -> Result<Arc<Vec<u8>>> {
        if let Some(data) = self.touch(page) {
            self.hits += 1;
            return Ok(data);
        }
        self.misses += 1;
        let data = Arc::new(dev.psync_read(&[page])?.pop().unwrap());
        self.install(dev, page, data.clone(), 1, false)?;
        Ok(data)
    }

    /// Looks up `pages`; all misses are fetched in one psync batch.
    pub fn get_many(&mut self, dev: &mut Device, pages: &[PageId]) -> Result<Vec<Arc<Vec<u8>>>> {
        self.get_many_extents(dev, &pages.iter().map(|&p| (p, 1)).collect::<Vec<_>>())
    }

    /// Like [`get_many`](Self::get_many) for multi-page extents, each cached
    /// as one frame keyed by its first page.
    pub fn get_many_extents(&mut self, dev: &mut Device, extents: &[(PageId, u32)]) -> Result<Vec<Arc<Vec<u8>>>> {
        let mut out: Vec<Option<Arc<Vec<u8>>>> = Vec::with_capacity(extents.len());
        let mut missing = Vec::new();
        for (i, &(p, _)) in extents.iter().enumerate() {
            match self.touch(p) {
                Some(d) => {
                    self.hits += 1;
                    out.push(Some(d));
                }
                None => {
                    self.misses += 1;
                    out.push(None);
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let req: Vec<(PageId, u32)> = missing.iter().map(|&i| extents[i]).collect();
            let bufs = dev.psync_read_extents(&req)?;
            for (&i, buf) in missing.iter().zip(bufs) {
                let data = Arc::new(buf);
                self.install(dev, extents[i].0, data.clone(), extents[i].1 as usize, false)?;
                out[i] = Some(data);
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    /// Installs new contents for `page`, marking the frame dirty. With a
    /// zero-capacity pool the page is written through immediately.
    pub fn put_dirty(&mut self, dev: &mut Device, page: PageId, data: Vec<u8>) -> Result<()> {
        if self.capacity == 0 {
            self.remove(page);
            return dev.psync_write(&[(page, &data)]);
        }
        self.install(dev, page, Arc::new(data), 1, true)
    }

    /// Refreshes a frame after its pages were written directly to the device.
    pub fn put_clean(&mut self, dev: &mut Device, page: PageId, data: Vec<u8>, pages: usize) -> Result<()> {
        self.install(dev, page, Arc::new(data), pages, false)
    }

    /// Refreshes `page` only if it is resident.
    pub fn refresh_if_resident(&mut self, page: PageId, data: &[u8]) {
        if let Some(frame) = self.frames.get_mut(&page) {
            if frame.data.len() == data.len() {
                frame.data = Arc::new(data.to_vec());
            } else {
                self.remove(page);
            }
        }
    }

    /// Drops a frame without writing it back.
    pub fn remove(&mut self, page: PageId) {
        if let Some(frame) = self.frames.remove(&page) {
            self.lru.remove(&frame.tick);
            self.used -= frame.pages;
        }
    }

    fn install(&mut self, dev: &mut Device, page: PageId, data: Arc<Vec<u8>>, pages: usize, dirty: bool) -> Result<()> {
        let was_dirty = match self.frames.get(&page) {
            Some(f) => f.dirty,
            None => false,
        };
        self.remove(page);
        if pages > self.capacity {
            if dirty || was_dirty {
                dev.psync_write_extents(&[(page, &data)])?;
            }
            return Ok(());
        }
        while self.used + pages > self.capacity {
            self.evict_one(dev)?;
        }
        self.tick += 1;
        self.lru.insert(self.tick, page);
        self.frames.insert(
            page,
            Frame {
                data,
                pages,
                dirty: dirty || was_dirty,
                tick: self.tick,
            },
        );
        self.used += pages;
        Ok(())
    }

    fn evict_one(&mut self, dev: &mut Device) -> Result<()> {
        let Some((&tick, &victim)) = self.lru.iter().next() else {
            return Ok(());
        };
        self.lru.remove(&tick);
        let frame = self.frames.remove(&victim).unwrap();
        self.used -= frame.pages;
        if frame.dirty {
            dev.psync_write_extents(&[(victim, &frame.data)])?;
        }
        Ok(())
    }

    /// Writes back every dirty frame, one page per psync call, in page order.
    pub fn flush_all(&mut self, dev: &mut Device) -> Result<()> {
        let mut dirty: Vec<PageId> = self.frames.iter().filter(|(_, f)| f.dirty).map(|(&p, _)| p).collect();
        dirty.sort();
        for p in dirty {
            let frame = self.frames.get_mut(&p).unwrap();
            dev.psync_write_extents(&[(p, &frame.data)])?;
            frame.dirty = false;
        }
        Ok(())
    }

    /// Forgets every frame, dirty or not.
    pub fn clear(&mut self) {
        self.frames.clear();
        self.lru.clear();
        self.used = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceConfig;

    fn setup(n: usize) -> (Device, Vec<PageId>) {
        let mut dev = Device::emulated(DeviceConfig::default()).unwrap();
        let pages = (0..n).map(|_| dev.alloc_page().unwrap()).collect();
        (dev, pages)
    }

    #[test]
    fn hit_costs_nothing() {
        let (mut dev, p) = setup(1);
        let mut pool = BufferPool::new(4);
        pool.get(&mut dev, p[0]).unwrap();
        pool.get(&mut dev, p[0]).unwrap();
        assert_eq!(dev.stats().pages_read, 1);
    }

    #[test]
    fn lru_eviction_trace() {
        let (mut dev, p) = setup(3);
        let (a, b, c) = (p[0], p[1], p[2]);
        let mut pool = BufferPool::new(2);
        for page in [a, b, c, a] {
            pool.get(&mut dev, page).unwrap();
        }
        assert_eq!(dev.stats().pages_read, 4);
        // a was re-read; b is now least recent
        assert!(pool.contains(a) && pool.contains(c) && !pool.contains(b));
    }

    #[test]
    fn flush_all_writes_dirty_pages() {
        let (mut dev, p) = setup(3);
        let mut pool = BufferPool::new(8);
        for &page in &p {
            pool.put_dirty(&mut dev, page, vec![9u8; 4096]).unwrap();
        }
        assert_eq!(pool.dirty_pages(), 3);
        pool.flush_all(&mut dev).unwrap();
        assert_eq!(dev.stats().pages_written, 3);
        assert_eq!(pool.dirty_pages(), 0);
        assert_eq!(dev.psync_read(&[p[1]]).unwrap()[0][0], 9);
    }

    #[test]
    fn dirty_eviction_writes_back() {
        let (mut dev, p) = setup(2);
        let mut pool = BufferPool::new(1);
        pool.put_dirty(&mut dev, p[0], vec![3u8; 4096]).unwrap();
        pool.get(&mut dev, p[1]).unwrap();
        assert_eq!(dev.stats().pages_written, 1);
        assert_eq!(dev.psync_read(&[p[0]]).unwrap()[0][0], 3);
    }

    #[test]
    fn get_many_batches_misses() {
        let (mut dev, p) = setup(5);
        let mut pool = BufferPool::new(10);
        pool.get(&mut dev, p[0]).unwrap();
        dev.reset_stats();
        let out = pool.get_many(&mut dev, &p).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(dev.stats().read_batches, 1);
        assert_eq!(dev.stats().pages_read, 4);
    }
}
