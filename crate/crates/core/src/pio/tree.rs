use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use super::entry::{apply, shrink, OpFlag, OpqEntry};
use super::leaf::{decode_segment, encode_segment, PioLeaf};
use super::{LsMap, OpQueue, PioConfig};
use crate::btree::node::{split_sizes, InternalNode};
use crate::btree::rebalance::{fix_internals, fix_leaves, split_internal};
use crate::btree::{
    build_internal_levels, check_sorted_unique, fill_target, group_sizes, write_all, BufferPool, IndexKind,
    IndexRecord, Superblock, TreeConfig, SUPERBLOCK_PAGE,
};
use crate::device::{Device, PageId};
use crate::recovery::{CrashInjector, CrashPoint, LogRecord, Wal, AUTO_COMMIT};
use crate::{DataPtr, Error, Key, Result};

/// A leaf found by a multi-path search, with its surviving records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafView {
    pub page: PageId,
    pub records: Vec<IndexRecord>,
}

/// Per-level counters gathered while flushing: distinct nodes read and
/// queued entries routed through them. Depth 0 is the root.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelProfile {
    pub depth: usize,
    pub nodes: u64,
    pub entries: u64,
}

/// Separator change a child reports to its parent: a new node (insert), a
/// moved lower bound (update), or a node that disappeared (delete).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FenceKey {
    key: Key,
    child: PageId,
    op: OpFlag,
}

fn apply_fence(node: &mut InternalNode, f: FenceKey) {
    match f.op {
        OpFlag::Insert => {
            let pos = node.keys.partition_point(|&k| k < f.key);
            node.keys.insert(pos, f.key);
            node.children.insert(pos + 1, f.child);
        }
        OpFlag::Update => {
            let ci = node.children.iter().position(|&c| c == f.child).unwrap();
            node.keys[ci - 1] = f.key;
        }
        OpFlag::Delete => {
            let ci = node.children.iter().position(|&c| c == f.child).unwrap();
            node.keys.remove(ci - 1);
            node.children.remove(ci);
        }
    }
}

#[derive(Debug, Default)]
struct Outcome {
    fences: Vec<FenceKey>,
    underflow: bool,
}

struct Work {
    page: PageId,
    node: InternalNode,
    old: Arc<Vec<u8>>,
    range: Range<usize>,
    outcomes: Vec<(PageId, Outcome)>,
    dirty: bool,
}

struct PageWrite {
    page: PageId,
    data: Vec<u8>,
    /// Pre-image for undo logging; `None` for pages new in this flush.
    old: Option<Vec<u8>>,
    internal: bool,
}

/// B+-tree with an operation queue, multi-path search, batched updates and
/// append-only multi-segment leaves.
#[derive(Debug)]
pub struct PioBTree {
    pub(crate) dev: Device,
    pool: BufferPool,
    cfg: PioConfig,
    root: PageId,
    height: usize,
    pub(crate) opq: OpQueue,
    lsmap: LsMap,
    pending_free: Vec<(PageId, u32)>,
    sb_image: Vec<u8>,
    sb_state: (PageId, usize),
    profile: Vec<LevelProfile>,
    pub(crate) wal: Option<Wal>,
    pub(crate) crash: CrashInjector,
    pub(crate) txns: BTreeMap<u64, Vec<OpqEntry>>,
    pub(crate) next_txn: u64,
}

impl PioBTree {
    fn assemble(dev: Device, cfg: PioConfig, root: PageId, height: usize) -> Self {
        PioBTree {
            pool: BufferPool::new(cfg.tree.pool_pages),
            opq: OpQueue::new(cfg.opq_capacity(), cfg.speriod),
            lsmap: LsMap::new(cfg.leaf_segments),
            dev,
            cfg,
            root,
            height,
            pending_free: Vec::new(),
            sb_image: Vec::new(),
            sb_state: (PageId::NIL, 0),
            profile: Vec::new(),
            wal: None,
            crash: CrashInjector::default(),
            txns: BTreeMap::new(),
            next_txn: 1,
        }
    }

    /// Creates an empty tree: one empty root leaf.
    pub fn create(mut dev: Device, cfg: PioConfig) -> Result<Self> {
        cfg.validate(dev.page_size())?;
        dev.alloc_page()?;
        let root = dev.alloc_extent(cfg.leaf_segments)?;
        let leaf = PioLeaf::empty(cfg.leaf_segments, PageId::NIL);
        dev.psync_write_extents(&[(root, &leaf.encode(dev.page_size()))])?;
        let mut t = Self::assemble(dev, cfg, root, 1);
        t.lsmap.set_clamped(root, 0);
        t.write_superblock(false, PageId::NIL, 0)?;
        t.dev.reset_stats();
        Ok(t)
    }

    /// Builds a tree bottom-up from sorted, duplicate-free records, packing
    /// each leaf to `fill` of its `L * per-segment` capacity.
    pub fn bulk_load(mut dev: Device, cfg: PioConfig, records: &[IndexRecord], fill: f64) -> Result<Self> {
        cfg.validate(dev.page_size())?;
        check_sorted_unique(records)?;
        if let Some(r) = records.iter().find(|r| r.ptr > super::MAX_PTR) {
            return Err(Error::InvalidInput(format!("data pointer {} exceeds 2^62 - 1", r.ptr)));
        }
        if !(fill > 0.0 && fill <= 1.0) {
            return Err(Error::Config(format!("fill factor {fill} outside (0, 1]")));
        }
        if records.is_empty() {
            return Self::create(dev, cfg);
        }
        let ps = dev.page_size();
        let l = cfg.leaf_segments;
        dev.alloc_page()?;
        let cap = cfg.leaf_entries();
        let target = fill_target(cap, fill, cfg.min_leaf());
        let sizes = group_sizes(records.len(), target, cfg.min_leaf(), cap);
        let pages: Vec<PageId> = (0..sizes.len()).map(|_| dev.alloc_extent(l)).collect::<Result<_>>()?;
        let mut lsmap = LsMap::new(l);
        let mut writes = Vec::new();
        let mut level = Vec::with_capacity(pages.len());
        let mut start = 0;
        for (i, &s) in sizes.iter().enumerate() {
            let next = pages.get(i + 1).copied().unwrap_or(PageId::NIL);
            let leaf = PioLeaf::from_records(&records[start..start + s], l, cfg.tree.leaf_capacity, next);
            lsmap.set_clamped(pages[i], leaf.last_segment());
            for (j, chunk) in leaf.encode(ps).chunks(ps).enumerate() {
                writes.push((pages[i].offset(j as u64), chunk.to_vec()));
            }
            level.push((records[start].key, pages[i]));
            start += s;
            if writes.len() >= 4096 {
                write_all(&mut dev, &mut writes)?;
            }
        }
        write_all(&mut dev, &mut writes)?;
        let (root, levels) = build_internal_levels(&mut dev, level, cfg.tree.fanout, fill)?;
        let mut t = Self::assemble(dev, cfg, root, levels + 1);
        t.lsmap = lsmap;
        t.write_superblock(false, PageId::NIL, 0)?;
        t.dev.reset_stats();
        Ok(t)
    }

    /// Opens a tree written to `dev`. The allocation map is rebuilt from the
    /// reachable pages; the LSMap is loaded if the tree was closed cleanly and
    /// rebuilt from the leaves otherwise.
    pub fn open(mut dev: Device, pool_pages: usize) -> Result<Self> {
        dev.rebuild_allocation([SUPERBLOCK_PAGE]);
        let sb = Superblock::decode(&dev.psync_read(&[SUPERBLOCK_PAGE])?[0])?;
        if sb.kind != IndexKind::Pio {
            return Err(Error::Config(
                "device holds a baseline B+-tree, not a PIO B-tree".into(),
            ));
        }
        if sb.page_size as usize != dev.page_size() {
            return Err(Error::Config(format!(
                "index page size {} differs from device page size {}",
                sb.page_size,
                dev.page_size()
            )));
        }
        let cfg = PioConfig {
            tree: TreeConfig {
                fanout: sb.fanout as usize,
                leaf_capacity: sb.leaf_capacity as usize,
                pool_pages,
            },
            leaf_segments: sb.leaf_segments,
            opq_pages: sb.opq_pages as usize,
            pio_max: sb.pio_max as usize,
            speriod: sb.speriod as usize,
            bcnt: sb.bcnt as usize,
        };
        cfg.validate(dev.page_size())?;
        let l = cfg.leaf_segments;
        let mut reachable = vec![SUPERBLOCK_PAGE];
        let mut level = vec![sb.root];
        for _ in 1..sb.height {
            reachable.extend(&level);
            dev.rebuild_allocation(reachable.iter().copied());
            let mut next = Vec::new();
            for chunk in level.chunks(dev.config().max_batch) {
                for (p, buf) in chunk.iter().zip(dev.psync_read(chunk)?) {
                    next.extend(InternalNode::decode(*p, &buf)?.children);
                }
            }
            level = next;
        }
        for &leaf in &level {
            reachable.extend((0..l as u64).map(|i| leaf.offset(i)));
        }
        let lsmap_pages: Vec<PageId> = if sb.clean && !sb.lsmap_start.is_nil() {
            (0..sb.lsmap_pages as u64).map(|i| sb.lsmap_start.offset(i)).collect()
        } else {
            Vec::new()
        };
        dev.rebuild_allocation(reachable.iter().chain(&lsmap_pages).copied());
        let lsmap = if !lsmap_pages.is_empty() {
            let bytes = dev
                .psync_read_extents(&[(sb.lsmap_start, sb.lsmap_pages)])?
                .pop()
                .unwrap();
            LsMap::from_bytes(l, &bytes)
        } else {
            let mut map = LsMap::new(l);
            let ps = dev.page_size();
            for chunk in level.chunks(dev.config().max_batch) {
                let ext: Vec<(PageId, u32)> = chunk.iter().map(|&p| (p, l)).collect();
                for (&p, buf) in chunk.iter().zip(dev.psync_read_extents(&ext)?) {
                    map.set_clamped(p, PioLeaf::decode(p, l, ps, &buf)?.last_segment());
                }
            }
            map
        };
        dev.rebuild_allocation(reachable);
        let mut t = Self::assemble(dev, cfg, sb.root, sb.height as usize);
        t.lsmap = lsmap;
        t.write_superblock(false, PageId::NIL, 0)?;
        t.dev.reset_stats();
        Ok(t)
    }

    fn superblock(&self, clean: bool, lsmap_start: PageId, lsmap_pages: u32) -> Superblock {
        Superblock {
            kind: IndexKind::Pio,
            clean,
            page_size: self.dev.page_size() as u32,
            fanout: self.cfg.tree.fanout as u32,
            leaf_capacity: self.cfg.tree.leaf_capacity as u32,
            root: self.root,
            height: self.height as u32,
            leaf_segments: self.cfg.leaf_segments,
            opq_pages: self.cfg.opq_pages as u32,
            pio_max: self.cfg.pio_max as u32,
            speriod: self.cfg.speriod as u32,
            bcnt: self.cfg.bcnt as u32,
            lsmap_start,
            lsmap_pages,
        }
    }

    fn write_superblock(&mut self, clean: bool, lsmap_start: PageId, lsmap_pages: u32) -> Result<()> {
        let buf = self
            .superblock(clean, lsmap_start, lsmap_pages)
            .encode(self.dev.page_size());
        self.dev.psync_write(&[(SUPERBLOCK_PAGE, &buf)])?;
        self.sb_image = buf;
        self.sb_state = (self.root, self.height);
        Ok(())
    }

    pub fn config(&self) -> &PioConfig {
        &self.cfg
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn root(&self) -> PageId {
        self.root
    }

    pub fn device(&self) -> &Device {
        &self.dev
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.dev
    }

    pub fn pool(&self) -> &BufferPool {
        &self.pool
    }

    pub fn clear_pool(&mut self) {
        self.pool.clear();
    }

    /// Reads every internal node through the buffer pool, level by level.
    pub fn preload_internal(&mut self) -> Result<()> {
        let mut level = vec![self.root];
        for _ in 1..self.height {
            let mut next = Vec::new();
            for chunk in level.chunks(self.dev.config().max_batch) {
                for (node, _) in self.read_internals(chunk)? {
                    next.extend(node.children);
                }
            }
            level = next;
        }
        Ok(())
    }

    pub fn opq(&self) -> &OpQueue {
        &self.opq
    }

    pub fn lsmap(&self) -> &LsMap {
        &self.lsmap
    }

    pub fn crash_injector(&mut self) -> &mut CrashInjector {
        &mut self.crash
    }

    /// Flush counters accumulated since the last [`reset_profile`](Self::reset_profile).
    pub fn profile(&self) -> &[LevelProfile] {
        &self.profile
    }

    pub fn reset_profile(&mut self) {
        self.profile.clear();
    }

    fn note(&mut self, depth: usize, nodes: usize, entries: usize) {
        while self.profile.len() <= depth {
            let d = self.profile.len();
            self.profile.push(LevelProfile {
                depth: d,
                ..Default::default()
            });
        }
        self.profile[depth].nodes += nodes as u64;
        self.profile[depth].entries += entries as u64;
    }

    // ---- queue operations ----

    /// Queues an insert. A key that is already live keeps its old pointer.
    pub fn insert(&mut self, key: Key, ptr: DataPtr) -> Result<()> {
        self.enqueue(OpqEntry::insert(key, ptr))
    }

    pub fn delete(&mut self, key: Key) -> Result<()> {
        self.enqueue(OpqEntry::delete(key))
    }

    /// Queues an update; it has no effect if the key is not live.
    pub fn update(&mut self, key: Key, ptr: DataPtr) -> Result<()> {
        self.enqueue(OpqEntry::update(key, ptr))
    }

    /// Logs (when a WAL is attached) and queues one auto-committed entry,
    /// flushing `bcnt` entries first if the queue is full.
    pub fn enqueue(&mut self, entry: OpqEntry) -> Result<()> {
        entry.validate()?;
        if self.opq.is_full() {
            self.flush_partial()?;
        }
        if let Some(wal) = &mut self.wal {
            wal.append_forced(&LogRecord::Redo {
                txn: AUTO_COMMIT,
                entry,
            })?;
            self.crash.hit(CrashPoint::AfterRedo)?;
        }
        self.opq.append(entry);
        Ok(())
    }

    /// Appends without logging, flushing first if the queue is full.
    pub(crate) fn push_entry(&mut self, entry: OpqEntry) -> Result<()> {
        if self.opq.is_full() {
            self.flush_partial()?;
        }
        self.opq.append(entry);
        Ok(())
    }

    // ---- searches ----

    fn read_internal(&mut self, page: PageId) -> Result<(InternalNode, Arc<Vec<u8>>)> {
        let buf = self.pool.get(&mut self.dev, page)?;
        Ok((InternalNode::decode(page, &buf)?, buf))
    }

    fn read_internals(&mut self, pages: &[PageId]) -> Result<Vec<(InternalNode, Arc<Vec<u8>>)>> {
        let bufs = self.pool.get_many(&mut self.dev, pages)?;
        pages
            .iter()
            .zip(bufs)
            .map(|(&p, b)| Ok((InternalNode::decode(p, &b)?, b)))
            .collect()
    }

    fn read_leaves(&mut self, pages: &[PageId]) -> Result<Vec<(PioLeaf, Vec<u8>)>> {
        let l = self.cfg.leaf_segments;
        let ps = self.dev.page_size();
        let ext: Vec<(PageId, u32)> = pages.iter().map(|&p| (p, l)).collect();
        let bufs = self.dev.psync_read_extents(&ext)?;
        pages
            .iter()
            .zip(bufs)
            .map(|(&p, b)| Ok((PioLeaf::decode(p, l, ps, &b)?, b)))
            .collect()
    }

    /// Level-by-level descent reading every leaf whose key interval satisfies
    /// `want`, with at most `pio_max` reads per psync call per level.
    fn collect_leaves(&mut self, want: &dyn Fn(Option<Key>, Option<Key>) -> bool) -> Result<Vec<LeafView>> {
        let mut out = Vec::new();
        if self.height == 1 {
            let (leaf, _) = self.read_leaves(&[self.root])?.pop().unwrap();
            out.push(LeafView {
                page: self.root,
                records: leaf.records(),
            });
        } else {
            let (root, _) = self.read_internal(self.root)?;
            self.collect_level(vec![(root, None, None)], 0, want, &mut out)?;
        }
        Ok(out)
    }

    fn collect_level(
        &mut self,
        nodes: Vec<(InternalNode, Option<Key>, Option<Key>)>,
        depth: usize,
        want: &dyn Fn(Option<Key>, Option<Key>) -> bool,
        out: &mut Vec<LeafView>,
    ) -> Result<()> {
        let mut ptrs = Vec::new();
        for (node, lo, hi) in &nodes {
            for i in 0..node.children.len() {
                let (cl, ch) = node.child_bounds(i);
                let (cl, ch) = (cl.or(*lo), ch.or(*hi));
                if want(cl, ch) {
                    ptrs.push((node.children[i], cl, ch));
                }
            }
        }
        let leaves_next = depth + 2 == self.height;
        for chunk in ptrs.chunks(self.cfg.pio_max) {
            let pages: Vec<PageId> = chunk.iter().map(|c| c.0).collect();
            if leaves_next {
                for (&page, (leaf, _)) in pages.iter().zip(self.read_leaves(&pages)?) {
                    out.push(LeafView {
                        page,
                        records: leaf.records(),
                    });
                }
            } else {
                let children = self
                    .read_internals(&pages)?
                    .into_iter()
                    .zip(chunk)
                    .map(|((n, _), &(_, lo, hi))| (n, lo, hi))
                    .collect();
                self.collect_level(children, depth + 1, want, out)?;
            }
        }
        Ok(())
    }

    /// Multi-path search: the leaves covering the search keys, in key order.
    /// The queue is not consulted.
    pub fn mpsearch(&mut self, keys: &[Key]) -> Result<Vec<LeafView>> {
        let mut s = keys.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() {
            return Ok(Vec::new());
        }
        self.collect_leaves(&|lo, hi| super::check_search_needed(lo, hi, &s))
    }

    /// Looks up many keys with one multi-path search, then applies queued
    /// operations.
    pub fn multi_search(&mut self, keys: &[Key]) -> Result<Vec<Option<DataPtr>>> {
        let leaves = self.mpsearch(keys)?;
        let mut found: BTreeMap<Key, DataPtr> = BTreeMap::new();
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        for leaf in &leaves {
            for r in &leaf.records {
                if sorted.binary_search(&r.key).is_ok() {
                    found.insert(r.key, r.ptr);
                }
            }
        }
        Ok(keys
            .iter()
            .map(|&k| {
                let mut live = found.get(&k).copied();
                for e in self.opq.search(k) {
                    apply(&mut live, &e);
                }
                live
            })
            .collect())
    }

    pub fn point_search(&mut self, key: Key) -> Result<Option<DataPtr>> {
        Ok(self.multi_search(&[key])?[0])
    }

    /// Records with `start <= key < end`, reading all overlapping leaves in
    /// batched psync calls and applying queued operations.
    pub fn prange_search(&mut self, start: Key, end: Key) -> Result<Vec<IndexRecord>> {
        if start >= end {
            return Ok(Vec::new());
        }
        let leaves = self.collect_leaves(&|lo, hi| lo.is_none_or(|lo| lo < end) && hi.is_none_or(|hi| hi > start))?;
        let mut live: BTreeMap<Key, Option<DataPtr>> = BTreeMap::new();
        for leaf in &leaves {
            for r in leaf.records.iter().filter(|r| (start..end).contains(&r.key)) {
                live.insert(r.key, Some(r.ptr));
            }
        }
        for e in self.opq.range(start, end) {
            apply(live.entry(e.key()).or_default(), &e);
        }
        Ok(live
            .into_iter()
            .filter_map(|(k, p)| p.map(|p| IndexRecord::new(k, p)))
            .collect())
    }

    // ---- flushing ----

    /// Flushes the `bcnt` lowest-key queued entries. Returns how many.
    pub fn flush_partial(&mut self) -> Result<usize> {
        self.flush_once(self.cfg.effective_bcnt())
    }

    /// Flushes the whole queue as a series of partial flushes.
    pub fn flush_all(&mut self) -> Result<()> {
        while !self.opq.is_empty() {
            self.flush_partial()?;
        }
        Ok(())
    }

    fn flush_once(&mut self, bcnt: usize) -> Result<usize> {
        let slots = self.opq.take_lowest(bcnt);
        let Some(last) = slots.last() else {
            return Ok(0);
        };
        let (lo, hi) = (slots[0].entry.key(), last.entry.key());
        let cut = slots.iter().filter(|s| s.entry.key() == hi).count() as u64;
        let entries: Vec<OpqEntry> = slots.iter().map(|s| s.entry).collect();
        let start = match &mut self.wal {
            Some(wal) => {
                let lsn = wal.append_forced(&LogRecord::FlushStart { lo, hi, cut })?;
                self.crash.hit(CrashPoint::AfterFlushStart)?;
                Some(lsn)
            }
            None => None,
        };
        self.bupdate(&entries)?;
        if self.sb_state != (self.root, self.height) {
            let buf = self.superblock(false, PageId::NIL, 0).encode(self.dev.page_size());
            let old = std::mem::replace(&mut self.sb_image, buf.clone());
            self.write_batch(vec![PageWrite {
                page: SUPERBLOCK_PAGE,
                data: buf,
                old: Some(old),
                internal: false,
            }])?;
            self.sb_state = (self.root, self.height);
        }
        if let Some(start) = start {
            self.crash.hit(CrashPoint::BeforeFlushEnd)?;
            self.wal
                .as_mut()
                .unwrap()
                .append_forced(&LogRecord::FlushEnd { start })?;
            self.crash.hit(CrashPoint::AfterFlushEnd)?;
        }
        for (page, n) in std::mem::take(&mut self.pending_free) {
            self.dev.free_extent(page, n)?;
        }
        Ok(entries.len())
    }

    fn write_batch(&mut self, writes: Vec<PageWrite>) -> Result<()> {
        if writes.is_empty() {
            return Ok(());
        }
        let ps = self.dev.page_size();
        if let Some(wal) = &mut self.wal {
            for w in &writes {
                if let Some(old) = &w.old {
                    for (i, image) in old.chunks(ps).enumerate() {
                        wal.append(&LogRecord::FlushUndo {
                            page: w.page.offset(i as u64),
                            image: image.to_vec(),
                        })?;
                    }
                }
            }
            wal.force()?;
        }
        self.crash.hit(CrashPoint::BeforeNodeWrite)?;
        for chunk in writes.chunks(self.dev.config().max_batch) {
            let refs: Vec<(PageId, &[u8])> = chunk.iter().map(|w| (w.page, w.data.as_slice())).collect();
            self.dev.psync_write_extents(&refs)?;
        }
        for w in writes.iter().filter(|w| w.internal) {
            self.pool.refresh_if_resident(w.page, &w.data);
        }
        self.crash.hit(CrashPoint::AfterNodeWrite)
    }

    fn defer_free(&mut self, page: PageId, pages: u32) {
        self.pool.remove(page);
        self.pending_free.push((page, pages));
    }

    /// Applies sorted entries to the tree.
    fn bupdate(&mut self, entries: &[OpqEntry]) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        if self.height == 1 {
            let root = self.root;
            let oc = self
                .update_leaves(&[(root, 0..entries.len())], entries, true)?
                .pop()
                .unwrap();
            let mut writes = Vec::new();
            self.grow(oc.fences, &mut writes)?;
            return self.write_batch(writes);
        }
        let (node, old) = self.read_internal(self.root)?;
        self.note(0, 1, entries.len());
        let mut works = vec![Work {
            page: self.root,
            node,
            old,
            range: 0..entries.len(),
            outcomes: Vec::new(),
            dirty: false,
        }];
        self.descend_update(&mut works, entries, 0)?;
        let root = works.pop().unwrap();
        self.finish_root(root)
    }

    fn descend_update(&mut self, works: &mut [Work], entries: &[OpqEntry], depth: usize) -> Result<()> {
        let mut ptrs: Vec<(usize, PageId, Range<usize>)> = Vec::new();
        for (wi, w) in works.iter().enumerate() {
            let mut start = w.range.start;
            for (ci, &child) in w.node.children.iter().enumerate() {
                let end = match w.node.keys.get(ci) {
                    Some(&k) => start + entries[start..w.range.end].partition_point(|e| e.key() < k),
                    None => w.range.end,
                };
                if end > start {
                    ptrs.push((wi, child, start..end));
                }
                start = end;
            }
        }
        let leaves_next = depth + 2 == self.height;
        for chunk in ptrs.chunks(self.cfg.pio_max) {
            let outcomes = if leaves_next {
                let leaves: Vec<(PageId, Range<usize>)> = chunk.iter().map(|(_, p, r)| (*p, r.clone())).collect();
                self.update_leaves(&leaves, entries, false)?
            } else {
                let pages: Vec<PageId> = chunk.iter().map(|c| c.1).collect();
                let routed: usize = chunk.iter().map(|c| c.2.len()).sum();
                self.note(depth + 1, pages.len(), routed);
                let mut children: Vec<Work> = self
                    .read_internals(&pages)?
                    .into_iter()
                    .zip(chunk)
                    .map(|((node, old), (_, page, range))| Work {
                        page: *page,
                        node,
                        old,
                        range: range.clone(),
                        outcomes: Vec::new(),
                        dirty: false,
                    })
                    .collect();
                self.descend_update(&mut children, entries, depth + 1)?;
                self.finish_internals(children, depth + 3 == self.height)?
            };
            for ((wi, page, _), oc) in chunk.iter().zip(outcomes) {
                works[*wi].outcomes.push((*page, oc));
            }
        }
        Ok(())
    }

    /// Appends each leaf's entries to its last segment, or rewrites the
    /// whole leaf (shrink, then split if still full) when they do not fit.
    fn update_leaves(
        &mut self,
        leaves: &[(PageId, Range<usize>)],
        entries: &[OpqEntry],
        is_root: bool,
    ) -> Result<Vec<Outcome>> {
        let ps = self.dev.page_size();
        let l = self.cfg.leaf_segments;
        let per = self.cfg.tree.leaf_capacity;
        let cap = self.cfg.leaf_entries();
        let depth = self.height - 1;
        self.note(depth, leaves.len(), leaves.iter().map(|(_, r)| r.len()).sum());

        let segs: Vec<u32> = leaves.iter().map(|(p, _)| self.lsmap.get(*p)).collect();
        let last_pages: Vec<PageId> = leaves
            .iter()
            .zip(&segs)
            .map(|((p, _), &s)| p.offset(s as u64))
            .collect();
        let last_bufs = self.dev.psync_read(&last_pages)?;

        let mut outcomes: Vec<Outcome> = leaves.iter().map(|_| Outcome::default()).collect();
        let mut writes = Vec::new();
        let mut rewrite = Vec::new();
        for (i, ((leaf, range), buf)) in leaves.iter().zip(&last_bufs).enumerate() {
            let seg = segs[i];
            let (mut log, next) = decode_segment(last_pages[i], seg, buf)?;
            let incoming = &entries[range.clone()];
            let free = per.saturating_sub(log.len()) + (l - 1 - seg) as usize * per;
            if incoming.len() > free {
                rewrite.push(i);
                continue;
            }
            log.extend_from_slice(incoming);
            let mut data = Vec::new();
            let mut old = buf.clone();
            for (j, chunk) in log.chunks(per).enumerate() {
                let idx = seg + j as u32;
                data.extend(encode_segment(idx, chunk, next, ps));
                if j > 0 {
                    old.extend(encode_segment(idx, &[], next, ps));
                }
            }
            let new_last = seg + (log.len().div_ceil(per).max(1) - 1) as u32;
            self.lsmap.set_clamped(*leaf, new_last);
            writes.push(PageWrite {
                page: last_pages[i],
                data,
                old: Some(old),
                internal: false,
            });
        }

        if !rewrite.is_empty() {
            let pages: Vec<PageId> = rewrite.iter().map(|&i| leaves[i].0).collect();
            for (&i, (leaf, old)) in rewrite.iter().zip(self.read_leaves(&pages)?) {
                let page = leaves[i].0;
                let records = shrink(leaf.log().chain(&entries[leaves[i].1.clone()]));
                if records.len() < cap {
                    let fresh = PioLeaf::from_records(&records, l, per, leaf.next);
                    self.lsmap.set_clamped(page, fresh.last_segment());
                    writes.push(PageWrite {
                        page,
                        data: fresh.encode(ps),
                        old: Some(old),
                        internal: false,
                    });
                    outcomes[i].underflow = !is_root && records.len() < self.cfg.min_leaf();
                    continue;
                }
                let sizes = split_sizes(records.len(), cap - 1);
                let mut piece_pages = vec![page];
                for _ in 1..sizes.len() {
                    piece_pages.push(self.dev.alloc_extent(l)?);
                }
                let mut start = 0;
                let mut old = Some(old);
                for (j, &s) in sizes.iter().enumerate() {
                    let next = piece_pages.get(j + 1).copied().unwrap_or(leaf.next);
                    let piece = &records[start..start + s];
                    let fresh = PioLeaf::from_records(piece, l, per, next);
                    self.lsmap.set_clamped(piece_pages[j], fresh.last_segment());
                    writes.push(PageWrite {
                        page: piece_pages[j],
                        data: fresh.encode(ps),
                        old: old.take(),
                        internal: false,
                    });
                    if j > 0 {
                        outcomes[i].fences.push(FenceKey {
                            key: piece[0].key,
                            child: piece_pages[j],
                            op: OpFlag::Insert,
                        });
                    }
                    start += s;
                }
            }
        }
        self.write_batch(writes)?;
        Ok(outcomes)
    }

    /// Applies child outcomes to a parent and fixes underflowing children by
    /// merging with or borrowing from a sibling.
    fn absorb_outcomes(&mut self, w: &mut Work, children_are_leaves: bool) -> Result<()> {
        let mut under = Vec::new();
        for (child, oc) in std::mem::take(&mut w.outcomes) {
            for f in oc.fences {
                apply_fence(&mut w.node, f);
                w.dirty = true;
            }
            if oc.underflow {
                under.push(child);
            }
        }
        for child in under {
            if children_are_leaves {
                self.fix_leaf(w, child)?;
            } else {
                self.fix_internal(w, child)?;
            }
        }
        Ok(())
    }

    fn sibling_pair(node: &InternalNode, child: PageId) -> Option<(usize, usize)> {
        let ci = node.children.iter().position(|&c| c == child)?;
        if node.children.len() < 2 {
            return None;
        }
        Some(if ci + 1 < node.children.len() {
            (ci, ci + 1)
        } else {
            (ci - 1, ci)
        })
    }

    fn fix_leaf(&mut self, w: &mut Work, mut child: PageId) -> Result<()> {
        let ps = self.dev.page_size();
        let l = self.cfg.leaf_segments;
        let per = self.cfg.tree.leaf_capacity;
        while let Some((li, ri)) = Self::sibling_pair(&w.node, child) {
            let (lp, rp) = (w.node.children[li], w.node.children[ri]);
            let mut read = self.read_leaves(&[lp, rp])?;
            let (right, rold) = read.pop().unwrap();
            let (left, lold) = read.pop().unwrap();
            let (mut lrec, mut rrec) = (left.records(), right.records());
            let own = if child == lp { lrec.len() } else { rrec.len() };
            if own >= self.cfg.min_leaf() {
                return Ok(());
            }
            w.dirty = true;
            match fix_leaves(&mut lrec, &mut rrec, self.cfg.leaf_entries() - 1) {
                Some(sep) => {
                    let lnew = PioLeaf::from_records(&lrec, l, per, left.next);
                    let rnew = PioLeaf::from_records(&rrec, l, per, right.next);
                    self.lsmap.set_clamped(lp, lnew.last_segment());
                    self.lsmap.set_clamped(rp, rnew.last_segment());
                    self.write_batch(vec![
                        PageWrite {
                            page: lp,
                            data: lnew.encode(ps),
                            old: Some(lold),
                            internal: false,
                        },
                        PageWrite {
                            page: rp,
                            data: rnew.encode(ps),
                            old: Some(rold),
                            internal: false,
                        },
                    ])?;
                    apply_fence(
                        &mut w.node,
                        FenceKey {
                            key: sep,
                            child: rp,
                            op: OpFlag::Update,
                        },
                    );
                    return Ok(());
                }
                None => {
                    let lnew = PioLeaf::from_records(&lrec, l, per, right.next);
                    self.lsmap.set_clamped(lp, lnew.last_segment());
                    self.write_batch(vec![PageWrite {
                        page: lp,
                        data: lnew.encode(ps),
                        old: Some(lold),
                        internal: false,
                    }])?;
                    self.defer_free(rp, l);
                    apply_fence(
                        &mut w.node,
                        FenceKey {
                            key: 0,
                            child: rp,
                            op: OpFlag::Delete,
                        },
                    );
                    child = lp;
                }
            }
        }
        Ok(())
    }

    fn fix_internal(&mut self, w: &mut Work, mut child: PageId) -> Result<()> {
        let ps = self.dev.page_size();
        let fanout = self.cfg.tree.fanout;
        while let Some((li, ri)) = Self::sibling_pair(&w.node, child) {
            let (lp, rp) = (w.node.children[li], w.node.children[ri]);
            let mut read = self.read_internals(&[lp, rp])?;
            let (mut right, rold) = read.pop().unwrap();
            let (mut left, lold) = read.pop().unwrap();
            let own = if child == lp {
                left.children.len()
            } else {
                right.children.len()
            };
            if own >= self.cfg.tree.min_pointers() {
                return Ok(());
            }
            w.dirty = true;
            match fix_internals(&mut left, w.node.keys[li], &mut right, fanout) {
                Some(sep) => {
                    self.write_batch(vec![
                        PageWrite {
                            page: lp,
                            data: left.encode(ps),
                            old: Some(lold.to_vec()),
                            internal: true,
                        },
                        PageWrite {
                            page: rp,
                            data: right.encode(ps),
                            old: Some(rold.to_vec()),
                            internal: true,
                        },
                    ])?;
                    apply_fence(
                        &mut w.node,
                        FenceKey {
                            key: sep,
                            child: rp,
                            op: OpFlag::Update,
                        },
                    );
                    return Ok(());
                }
                None => {
                    self.write_batch(vec![PageWrite {
                        page: lp,
                        data: left.encode(ps),
                        old: Some(lold.to_vec()),
                        internal: true,
                    }])?;
                    self.defer_free(rp, 1);
                    apply_fence(
                        &mut w.node,
                        FenceKey {
                            key: 0,
                            child: rp,
                            op: OpFlag::Delete,
                        },
                    );
                    child = lp;
                }
            }
        }
        Ok(())
    }

    /// Finishes one chunk of non-root internal nodes: absorb child outcomes,
    /// split overfull nodes, and write every changed node in one batch.
    fn finish_internals(&mut self, works: Vec<Work>, children_are_leaves: bool) -> Result<Vec<Outcome>> {
        let ps = self.dev.page_size();
        let fanout = self.cfg.tree.fanout;
        let mut writes = Vec::new();
        let mut outcomes = Vec::with_capacity(works.len());
        for mut w in works {
            self.absorb_outcomes(&mut w, children_are_leaves)?;
            let mut oc = Outcome::default();
            if w.node.children.len() > fanout {
                let (pieces, seps) = split_internal(w.node, fanout);
                let mut pieces = pieces.into_iter();
                writes.push(PageWrite {
                    page: w.page,
                    data: pieces.next().unwrap().encode(ps),
                    old: Some(w.old.to_vec()),
                    internal: true,
                });
                for (piece, sep) in pieces.zip(seps) {
                    let page = self.dev.alloc_page()?;
                    writes.push(PageWrite {
                        page,
                        data: piece.encode(ps),
                        old: None,
                        internal: true,
                    });
                    oc.fences.push(FenceKey {
                        key: sep,
                        child: page,
                        op: OpFlag::Insert,
                    });
                }
            } else {
                oc.underflow = w.node.children.len() < self.cfg.tree.min_pointers();
                if w.dirty {
                    writes.push(PageWrite {
                        page: w.page,
                        data: w.node.encode(ps),
                        old: Some(w.old.to_vec()),
                        internal: true,
                    });
                }
            }
            outcomes.push(oc);
        }
        self.write_batch(writes)?;
        Ok(outcomes)
    }

    fn finish_root(&mut self, mut w: Work) -> Result<()> {
        let ps = self.dev.page_size();
        let fanout = self.cfg.tree.fanout;
        self.absorb_outcomes(&mut w, self.height == 2)?;
        let mut writes = Vec::new();
        if w.node.children.len() > fanout {
            let (pieces, seps) = split_internal(w.node, fanout);
            let mut pieces = pieces.into_iter();
            writes.push(PageWrite {
                page: w.page,
                data: pieces.next().unwrap().encode(ps),
                old: Some(w.old.to_vec()),
                internal: true,
            });
            let mut fences = Vec::new();
            for (piece, sep) in pieces.zip(seps) {
                let page = self.dev.alloc_page()?;
                writes.push(PageWrite {
                    page,
                    data: piece.encode(ps),
                    old: None,
                    internal: true,
                });
                fences.push(FenceKey {
                    key: sep,
                    child: page,
                    op: OpFlag::Insert,
                });
            }
            self.grow(fences, &mut writes)?;
        } else if w.node.children.len() == 1 {
            self.defer_free(w.page, 1);
            self.root = w.node.children[0];
            self.height -= 1;
            while self.height > 1 {
                let (node, _) = self.read_internal(self.root)?;
                if node.children.len() != 1 {
                    break;
                }
                let old_root = self.root;
                self.defer_free(old_root, 1);
                self.root = node.children[0];
                self.height -= 1;
            }
        } else if w.dirty {
            writes.push(PageWrite {
                page: w.page,
                data: w.node.encode(ps),
                old: Some(w.old.to_vec()),
                internal: true,
            });
        }
        self.write_batch(writes)
    }

    /// Adds root levels above the current root until `fences` fit.
    fn grow(&mut self, mut fences: Vec<FenceKey>, writes: &mut Vec<PageWrite>) -> Result<()> {
        let ps = self.dev.page_size();
        let fanout = self.cfg.tree.fanout;
        while !fences.is_empty() {
            let mut root = InternalNode {
                keys: Vec::new(),
                children: vec![self.root],
            };
            for f in fences.drain(..) {
                apply_fence(&mut root, f);
            }
            let page = self.dev.alloc_page()?;
            if root.children.len() > fanout {
                let (pieces, seps) = split_internal(root, fanout);
                let mut pieces = pieces.into_iter();
                writes.push(PageWrite {
                    page,
                    data: pieces.next().unwrap().encode(ps),
                    old: None,
                    internal: true,
                });
                for (piece, sep) in pieces.zip(seps) {
                    let p = self.dev.alloc_page()?;
                    writes.push(PageWrite {
                        page: p,
                        data: piece.encode(ps),
                        old: None,
                        internal: true,
                    });
                    fences.push(FenceKey {
                        key: sep,
                        child: p,
                        op: OpFlag::Insert,
                    });
                }
            } else {
                writes.push(PageWrite {
                    page,
                    data: root.encode(ps),
                    old: None,
                    internal: true,
                });
            }
            self.root = page;
            self.height += 1;
        }
        Ok(())
    }

    // ---- lifecycle and inspection ----

    /// Flushes the queue, persists the LSMap and marks the index clean.
    pub fn close(mut self) -> Result<Device> {
        if !self.txns.is_empty() {
            return Err(Error::Usage("cannot close with open transactions".into()));
        }
        self.flush_all()?;
        let ps = self.dev.page_size();
        let mut bytes = self.lsmap.to_bytes();
        let pages = bytes.len().div_ceil(ps).max(1);
        bytes.resize(pages * ps, 0);
        let start = self.dev.alloc_extent(pages as u32)?;
        self.dev.psync_write_extents(&[(start, &bytes)])?;
        self.write_superblock(true, start, pages as u32)?;
        if let Some(wal) = &mut self.wal {
            wal.append_forced(&LogRecord::Checkpoint)?;
        }
        Ok(self.dev)
    }

    /// Hands back the device as-is, losing the queue.
    pub fn into_device(self) -> Device {
        self.dev
    }

    /// Leaf page ids in key order.
    pub fn leaf_pages(&mut self) -> Result<Vec<PageId>> {
        let mut level = vec![self.root];
        for _ in 1..self.height {
            let mut next = Vec::new();
            for chunk in level.chunks(self.dev.config().max_batch) {
                for (node, _) in self.read_internals(chunk)? {
                    next.extend(node.children);
                }
            }
            level = next;
        }
        Ok(level)
    }

    /// Every page of the tree: internal nodes level by level, then every
    /// segment of every leaf in key order.
    pub fn tree_pages(&mut self) -> Result<Vec<PageId>> {
        let mut out = Vec::new();
        let mut level = vec![self.root];
        for _ in 1..self.height {
            out.extend(&level);
            let mut next = Vec::new();
            for chunk in level.chunks(self.dev.config().max_batch) {
                for (node, _) in self.read_internals(chunk)? {
                    next.extend(node.children);
                }
            }
            level = next;
        }
        let l = u64::from(self.cfg.leaf_segments);
        out.extend(level.iter().flat_map(|p| (0..l).map(move |i| p.offset(i))));
        Ok(out)
    }

    /// Reads a whole leaf.
    pub fn read_leaf(&mut self, page: PageId) -> Result<PioLeaf> {
        Ok(self.read_leaves(&[page])?.pop().unwrap().0)
    }

    /// The full logical contents: tree records with queued entries applied.
    pub fn records(&mut self) -> Result<Vec<IndexRecord>> {
        let mut live: BTreeMap<Key, Option<DataPtr>> = BTreeMap::new();
        for page in self.leaf_pages()? {
            for r in self.read_leaf(page)?.records() {
                live.insert(r.key, Some(r.ptr));
            }
        }
        for e in self.opq.range(0, Key::MAX) {
            apply(live.entry(e.key()).or_default(), &e);
        }
        Ok(live
            .into_iter()
            .filter_map(|(k, p)| p.map(|p| IndexRecord::new(k, p)))
            .collect())
    }

    /// Structural check of the tree and the LSMap. Returns the number of
    /// live records stored in the leaves (queue excluded).
    ///
    /// Leaf occupancy minimums are not checked: deletes are appended lazily
    /// and only take effect on the next leaf rewrite.
    pub fn audit(&mut self) -> Result<usize> {
        let mut leaves = Vec::new();
        let count = self.audit_node(self.root, 1, None, None, &mut leaves)?;
        for (i, &(page, next)) in leaves.iter().enumerate() {
            let expected = leaves.get(i + 1).map_or(PageId::NIL, |l| l.0);
            if next != expected {
                return Err(Error::corrupt(page, format!("sibling link {next} expected {expected}")));
            }
        }
        Ok(count)
    }

    fn audit_node(
        &mut self,
        page: PageId,
        depth: usize,
        lo: Option<Key>,
        hi: Option<Key>,
        leaves: &mut Vec<(PageId, PageId)>,
    ) -> Result<usize> {
        let in_bounds = |k: Key| lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k < h);
        if depth == self.height {
            let leaf = self.read_leaf(page)?;
            if leaf.entry_count() > self.cfg.leaf_entries() {
                return Err(Error::corrupt(page, "leaf holds more entries than its capacity"));
            }
            if let Some(e) = leaf.log().find(|e| !in_bounds(e.key())) {
                return Err(Error::corrupt(
                    page,
                    format!("entry key {} outside separator bounds", e.key()),
                ));
            }
            let expected = leaf.last_segment().max(self.lsmap.floor());
            if self.lsmap.get(page) != expected {
                return Err(Error::corrupt(
                    page,
                    format!("LSMap says last segment {}, leaf has {expected}", self.lsmap.get(page)),
                ));
            }
            leaves.push((page, leaf.next));
            return Ok(leaf.records().len());
        }
        let (node, _) = self.read_internal(page)?;
        let min = if page == self.root { 2 } else { 1 };
        if node.children.len() < min || node.children.len() > self.cfg.tree.fanout {
            return Err(Error::corrupt(
                page,
                format!("internal node has {} pointers", node.children.len()),
            ));
        }
        if node.keys.windows(2).any(|w| w[0] >= w[1]) || !node.keys.iter().all(|&k| in_bounds(k)) {
            return Err(Error::corrupt(page, "internal keys unsorted or out of bounds"));
        }
        let mut total = 0;
        for i in 0..node.children.len() {
            let (clo, chi) = node.child_bounds(i);
            total += self.audit_node(node.children[i], depth + 1, clo.or(lo), chi.or(hi), leaves)?;
        }
        Ok(total)
    }
}
