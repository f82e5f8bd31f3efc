use super::node::{self, IndexRecord, InternalNode, LeafNode};
use super::rebalance::{fix_internals, fix_leaves, split_internal};
use super::superblock::{IndexKind, Superblock, SUPERBLOCK_PAGE};
use super::{build_internal_levels, check_sorted_unique, fill_target, group_sizes, write_all};
use super::{BufferPool, TreeConfig};
use crate::device::{Device, PageId};
use crate::{DataPtr, Error, Key, Result};

/// Classic B+-tree over device pages. All node accesses go through an LRU
/// buffer pool with write-back; [`BPlusTree::flush`] writes everything out.
#[derive(Debug)]
pub struct BPlusTree {
    dev: Device,
    pool: BufferPool,
    cfg: TreeConfig,
    root: PageId,
    height: usize,
}

type Path = Vec<(PageId, InternalNode, usize)>;

impl BPlusTree {
    /// Creates an empty tree (a single empty root leaf) on a fresh device.
    pub fn create(mut dev: Device, cfg: TreeConfig) -> Result<Self> {
        cfg.validate(dev.page_size())?;
        let sb = dev.alloc_page()?;
        debug_assert_eq!(sb, SUPERBLOCK_PAGE);
        let root = dev.alloc_page()?;
        let buf = LeafNode::default().encode(dev.page_size());
        dev.psync_write(&[(root, &buf)])?;
        let mut tree = BPlusTree {
            pool: BufferPool::new(cfg.pool_pages),
            dev,
            cfg,
            root,
            height: 1,
        };
        tree.write_superblock()?;
        tree.dev.reset_stats();
        Ok(tree)
    }

    /// Builds a tree bottom-up from sorted, duplicate-free records with
    /// leaves packed to `fill` of capacity.
    pub fn bulk_load(mut dev: Device, cfg: TreeConfig, records: &[IndexRecord], fill: f64) -> Result<Self> {
        cfg.validate(dev.page_size())?;
        check_sorted_unique(records)?;
        if !(fill > 0.0 && fill <= 1.0) {
            return Err(Error::Config(format!("fill factor {fill} outside (0, 1]")));
        }
        if records.is_empty() {
            return Self::create(dev, cfg);
        }
        let page_size = dev.page_size();
        dev.alloc_page()?;
        let target = fill_target(cfg.leaf_capacity, fill, cfg.min_leaf());
        let sizes = group_sizes(records.len(), target, cfg.min_leaf(), cfg.leaf_capacity);
        let pages: Vec<PageId> = (0..sizes.len()).map(|_| dev.alloc_page()).collect::<Result<_>>()?;
        let mut writes = Vec::with_capacity(pages.len());
        let mut level = Vec::with_capacity(pages.len());
        let mut start = 0;
        for (i, &s) in sizes.iter().enumerate() {
            let leaf = LeafNode {
                records: records[start..start + s].to_vec(),
                next: pages.get(i + 1).copied().unwrap_or(PageId::NIL),
            };
            writes.push((pages[i], leaf.encode(page_size)));
            level.push((records[start].key, pages[i]));
            start += s;
        }
        write_all(&mut dev, &mut writes)?;
        let (root, internal_levels) = build_internal_levels(&mut dev, level, cfg.fanout, fill)?;
        let mut tree = BPlusTree {
            pool: BufferPool::new(cfg.pool_pages),
            dev,
            cfg,
            root,
            height: internal_levels + 1,
        };
        tree.write_superblock()?;
        tree.dev.reset_stats();
        Ok(tree)
    }

    /// Opens a tree previously written to `dev`, rebuilding the page
    /// allocation map from the reachable nodes.
    pub fn open(mut dev: Device, pool_pages: usize) -> Result<Self> {
        dev.rebuild_allocation([SUPERBLOCK_PAGE]);
        let sb = Superblock::decode(&dev.psync_read(&[SUPERBLOCK_PAGE])?[0])?;
        if sb.kind != IndexKind::Baseline {
            return Err(Error::Config("device holds a PIO B-tree, not a baseline tree".into()));
        }
        let cfg = TreeConfig {
            fanout: sb.fanout as usize,
            leaf_capacity: sb.leaf_capacity as usize,
            pool_pages,
        };
        let mut reachable = vec![SUPERBLOCK_PAGE];
        let mut level = vec![sb.root];
        for depth in 0..sb.height {
            reachable.extend(&level);
            if depth + 1 == sb.height {
                break;
            }
            // allow reads of not-yet-registered pages while walking
            dev.rebuild_allocation(reachable.iter().copied());
            let mut next = Vec::new();
            for chunk in level.chunks(dev.config().max_batch) {
                for (p, buf) in chunk.iter().zip(dev.psync_read(chunk)?) {
                    next.extend(InternalNode::decode(*p, &buf)?.children);
                }
            }
            level = next;
        }
        dev.rebuild_allocation(reachable);
        dev.reset_stats();
        Ok(BPlusTree {
            pool: BufferPool::new(cfg.pool_pages),
            dev,
            cfg,
            root: sb.root,
            height: sb.height as usize,
        })
    }

    fn superblock(&self) -> Superblock {
        Superblock {
            kind: IndexKind::Baseline,
            clean: true,
            page_size: self.dev.page_size() as u32,
            fanout: self.cfg.fanout as u32,
            leaf_capacity: self.cfg.leaf_capacity as u32,
            root: self.root,
            height: self.height as u32,
            leaf_segments: 1,
            opq_pages: 0,
            pio_max: 0,
            speriod: 0,
            bcnt: 0,
            lsmap_start: PageId::NIL,
            lsmap_pages: 0,
        }
    }

    fn write_superblock(&mut self) -> Result<()> {
        let buf = self.superblock().encode(self.dev.page_size());
        self.dev.psync_write(&[(SUPERBLOCK_PAGE, &buf)])
    }

    pub fn config(&self) -> &TreeConfig {
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

    /// Drops every cached frame without writing it back.
    pub fn clear_pool(&mut self) {
        self.pool.clear();
    }

    /// Reads every internal node through the buffer pool, level by level.
    pub fn preload_internal(&mut self) -> Result<()> {
        let mut level = vec![self.root];
        for _ in 1..self.height {
            let mut next = Vec::new();
            for page in level {
                next.extend(self.load_internal(page)?.children);
            }
            level = next;
        }
        Ok(())
    }

    /// Writes back dirty pages and the superblock.
    pub fn flush(&mut self) -> Result<()> {
        self.pool.flush_all(&mut self.dev)?;
        self.write_superblock()
    }

    /// Flushes and hands back the device.
    pub fn close(mut self) -> Result<Device> {
        self.flush()?;
        Ok(self.dev)
    }

    /// Hands back the device without flushing (simulates losing memory).
    pub fn into_device(self) -> Device {
        self.dev
    }

    fn load_internal(&mut self, page: PageId) -> Result<InternalNode> {
        let buf = self.pool.get(&mut self.dev, page)?;
        InternalNode::decode(page, &buf)
    }

    fn load_leaf(&mut self, page: PageId) -> Result<LeafNode> {
        let buf = self.pool.get(&mut self.dev, page)?;
        LeafNode::decode(page, &buf)
    }

    fn store_internal(&mut self, page: PageId, node: &InternalNode) -> Result<()> {
        let buf = node.encode(self.dev.page_size());
        self.pool.put_dirty(&mut self.dev, page, buf)
    }

    fn store_leaf(&mut self, page: PageId, leaf: &LeafNode) -> Result<()> {
        let buf = leaf.encode(self.dev.page_size());
        self.pool.put_dirty(&mut self.dev, page, buf)
    }

    fn free(&mut self, page: PageId) -> Result<()> {
        self.pool.remove(page);
        self.dev.free_page(page)
    }

    fn descend(&mut self, key: Key) -> Result<(Path, PageId)> {
        let mut path = Vec::with_capacity(self.height);
        let mut page = self.root;
        for _ in 1..self.height {
            let node = self.load_internal(page)?;
            let idx = node.child_index(key);
            let child = node.children[idx];
            path.push((page, node, idx));
            page = child;
        }
        Ok((path, page))
    }

    pub fn search(&mut self, key: Key) -> Result<Option<DataPtr>> {
        let (_, leaf_page) = self.descend(key)?;
        let leaf = self.load_leaf(leaf_page)?;
        Ok(leaf
            .records
            .binary_search_by_key(&key, |r| r.key)
            .ok()
            .map(|i| leaf.records[i].ptr))
    }

    /// Inserts a record; an existing key is rejected with
    /// [`Error::DuplicateKey`] and leaves the tree unchanged.
    pub fn insert(&mut self, record: IndexRecord) -> Result<()> {
        if record.key > crate::MAX_KEY {
            return Err(Error::InvalidInput("key u64::MAX is reserved".into()));
        }
        let (mut path, leaf_page) = self.descend(record.key)?;
        let mut leaf = self.load_leaf(leaf_page)?;
        let pos = match leaf.records.binary_search_by_key(&record.key, |r| r.key) {
            Ok(_) => return Err(Error::DuplicateKey(record.key)),
            Err(pos) => pos,
        };
        leaf.records.insert(pos, record);
        if leaf.records.len() <= self.cfg.leaf_capacity {
            return self.store_leaf(leaf_page, &leaf);
        }

        // Leaf split.
        let sizes = node::split_sizes(leaf.records.len(), self.cfg.leaf_capacity);
        let mut rest = leaf.records.split_off(sizes[0]);
        let mut new_pages = Vec::with_capacity(sizes.len() - 1);
        for _ in 1..sizes.len() {
            new_pages.push(self.dev.alloc_page()?);
        }
        let tail_next = leaf.next;
        leaf.next = new_pages[0];
        self.store_leaf(leaf_page, &leaf)?;
        let mut promoted = Vec::with_capacity(new_pages.len());
        for (j, &page) in new_pages.iter().enumerate() {
            let take = sizes[j + 1];
            let remainder = rest.split_off(take);
            let piece = LeafNode {
                records: std::mem::replace(&mut rest, remainder),
                next: new_pages.get(j + 1).copied().unwrap_or(tail_next),
            };
            promoted.push((piece.records[0].key, page));
            self.store_leaf(page, &piece)?;
        }

        // Propagate separators upward.
        while let Some((page, mut parent, idx)) = path.pop() {
            for (j, &(sep, child)) in promoted.iter().enumerate() {
                parent.keys.insert(idx + j, sep);
                parent.children.insert(idx + j + 1, child);
            }
            if parent.children.len() <= self.cfg.fanout {
                return self.store_internal(page, &parent);
            }
            let (pieces, seps) = split_internal(parent, self.cfg.fanout);
            promoted.clear();
            let mut pieces = pieces.into_iter();
            self.store_internal(page, &pieces.next().unwrap())?;
            for (piece, sep) in pieces.zip(seps) {
                let p = self.dev.alloc_page()?;
                self.store_internal(p, &piece)?;
                promoted.push((sep, p));
            }
        }
        self.grow_root(promoted)
    }

    fn grow_root(&mut self, mut promoted: Vec<(Key, PageId)>) -> Result<()> {
        let mut left = self.root;
        while !promoted.is_empty() {
            let mut root = InternalNode {
                keys: Vec::new(),
                children: vec![left],
            };
            for &(sep, child) in &promoted {
                root.keys.push(sep);
                root.children.push(child);
            }
            let page = self.dev.alloc_page()?;
            promoted.clear();
            if root.children.len() > self.cfg.fanout {
                let (pieces, seps) = split_internal(root, self.cfg.fanout);
                let mut pieces = pieces.into_iter();
                self.store_internal(page, &pieces.next().unwrap())?;
                for (piece, sep) in pieces.zip(seps) {
                    let p = self.dev.alloc_page()?;
                    self.store_internal(p, &piece)?;
                    promoted.push((sep, p));
                }
            } else {
                self.store_internal(page, &root)?;
            }
            left = page;
            self.height += 1;
        }
        self.root = left;
        Ok(())
    }

    /// Replaces the data pointer of an existing key. Returns false (and
    /// changes nothing) when the key is absent.
    pub fn update(&mut self, record: IndexRecord) -> Result<bool> {
        let (_, leaf_page) = self.descend(record.key)?;
        let mut leaf = self.load_leaf(leaf_page)?;
        match leaf.records.binary_search_by_key(&record.key, |r| r.key) {
            Ok(i) => {
                leaf.records[i].ptr = record.ptr;
                self.store_leaf(leaf_page, &leaf)?;
                Ok(true)
            }
            Err(_) => Ok(false),
        }
    }

    /// Deletes `key`. Returns false for an absent key, which is not an error.
    pub fn delete(&mut self, key: Key) -> Result<bool> {
        let (mut path, leaf_page) = self.descend(key)?;
        let mut leaf = self.load_leaf(leaf_page)?;
        let Ok(pos) = leaf.records.binary_search_by_key(&key, |r| r.key) else {
            return Ok(false);
        };
        leaf.records.remove(pos);
        if path.is_empty() || leaf.records.len() >= self.cfg.min_leaf() {
            self.store_leaf(leaf_page, &leaf)?;
            return Ok(true);
        }

        // Leaf underflow: fix with a sibling under the same parent.
        let (parent_page, mut parent, idx) = path.pop().unwrap();
        let (li, ri) = if idx + 1 < parent.children.len() {
            (idx, idx + 1)
        } else {
            (idx - 1, idx)
        };
        let (lp, rp) = (parent.children[li], parent.children[ri]);
        let (mut left, mut right) = if li == idx {
            let r = self.load_leaf(rp)?;
            (leaf, r)
        } else {
            let l = self.load_leaf(lp)?;
            (l, leaf)
        };
        match fix_leaves(&mut left.records, &mut right.records, self.cfg.leaf_capacity) {
            Some(sep) => {
                parent.keys[li] = sep;
                self.store_leaf(lp, &left)?;
                self.store_leaf(rp, &right)?;
                self.store_internal(parent_page, &parent)?;
                return Ok(true);
            }
            None => {
                left.next = right.next;
                self.store_leaf(lp, &left)?;
                self.free(rp)?;
                parent.keys.remove(li);
                parent.children.remove(ri);
            }
        }

        // Internal underflow propagates upward.
        let mut node_page = parent_page;
        let mut node = parent;
        loop {
            let Some((pp, mut pnode, idx)) = path.pop() else {
                if node.children.len() == 1 {
                    self.root = node.children[0];
                    self.height -= 1;
                    self.free(node_page)?;
                } else {
                    self.store_internal(node_page, &node)?;
                }
                return Ok(true);
            };
            if node.children.len() >= self.cfg.min_pointers() {
                self.store_internal(node_page, &node)?;
                return Ok(true);
            }
            let (li, ri) = if idx + 1 < pnode.children.len() {
                (idx, idx + 1)
            } else {
                (idx - 1, idx)
            };
            let (lp, rp) = (pnode.children[li], pnode.children[ri]);
            let (mut left, mut right) = if li == idx {
                let r = self.load_internal(rp)?;
                (node, r)
            } else {
                let l = self.load_internal(lp)?;
                (l, node)
            };
            match fix_internals(&mut left, pnode.keys[li], &mut right, self.cfg.fanout) {
                Some(sep) => {
                    pnode.keys[li] = sep;
                    self.store_internal(lp, &left)?;
                    self.store_internal(rp, &right)?;
                    self.store_internal(pp, &pnode)?;
                    return Ok(true);
                }
                None => {
                    self.store_internal(lp, &left)?;
                    self.free(rp)?;
                    pnode.keys.remove(li);
                    pnode.children.remove(ri);
                }
            }
            node_page = pp;
            node = pnode;
        }
    }

    /// Records with `start <= key < end`: descend to the first leaf, then
    /// follow sibling links one single-page read at a time.
    pub fn range_search_legacy(&mut self, start: Key, end: Key) -> Result<Vec<IndexRecord>> {
        let mut out = Vec::new();
        if start >= end {
            return Ok(out);
        }
        let (_, mut page) = self.descend(start)?;
        loop {
            let leaf = self.load_leaf(page)?;
            let from = leaf.records.partition_point(|r| r.key < start);
            for r in &leaf.records[from..] {
                if r.key >= end {
                    return Ok(out);
                }
                out.push(*r);
            }
            if leaf.next.is_nil() {
                return Ok(out);
            }
            page = leaf.next;
        }
    }

    /// Leaf page ids in key order, found by walking the internal levels.
    pub fn leaf_pages(&mut self) -> Result<Vec<PageId>> {
        let mut level = vec![self.root];
        for _ in 1..self.height {
            let mut next = Vec::new();
            for p in level {
                next.extend(self.load_internal(p)?.children);
            }
            level = next;
        }
        Ok(level)
    }

    /// Full structural check. Returns the number of records.
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
        let is_root = page == self.root;
        let in_bounds = |k: Key| lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k < h);
        if depth == self.height {
            let leaf = self.load_leaf(page)?;
            if !is_root && leaf.records.len() < self.cfg.min_leaf() {
                return Err(Error::corrupt(page, "leaf underflow"));
            }
            if leaf.records.len() > self.cfg.leaf_capacity {
                return Err(Error::corrupt(page, "leaf overflow"));
            }
            if leaf.records.windows(2).any(|w| w[0].key >= w[1].key) {
                return Err(Error::corrupt(page, "leaf not sorted"));
            }
            if let Some(r) = leaf.records.iter().find(|r| !in_bounds(r.key)) {
                return Err(Error::corrupt(page, format!("key {} outside separator bounds", r.key)));
            }
            leaves.push((page, leaf.next));
            return Ok(leaf.records.len());
        }
        let node = self.load_internal(page)?;
        let min = if is_root { 2 } else { self.cfg.min_pointers() };
        if node.children.len() < min || node.children.len() > self.cfg.fanout {
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
