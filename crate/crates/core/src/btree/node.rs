//! Node page layouts.
//!
//! Every node page starts with a 16-byte header:
//!
//! ```text
//! offset  size  field
//! 0       1     node kind (1 = internal, 2 = leaf, 3 = leaf segment)
//! 1       1     segment index (leaf segments only)
//! 2       2     entry count, little endian
//! 4       4     reserved
//! 8       8     next-leaf page id (u64::MAX = none)
//! ```
//!
//! Internal nodes then hold `child[0]` followed by `count` pairs of
//! `(key, child[i+1])`. Leaves hold `count` `(key, data_ptr)` records.
//! All integers are little-endian u64.

use crate::device::PageId;
use crate::{DataPtr, Error, Key, Result};

pub const HEADER_SIZE: usize = 16;
pub(crate) const KIND_INTERNAL: u8 = 1;
pub(crate) const KIND_LEAF: u8 = 2;
pub(crate) const KIND_SEGMENT: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexRecord {
    pub key: Key,
    pub ptr: DataPtr,
}

impl IndexRecord {
    pub fn new(key: Key, ptr: DataPtr) -> Self {
        IndexRecord { key, ptr }
    }
}

/// Max pointers an internal node of `page_size` bytes can hold.
pub fn max_fanout(page_size: usize) -> usize {
    (page_size - HEADER_SIZE - 8) / 16 + 1
}

/// Max 16-byte records a leaf page of `page_size` bytes can hold.
pub fn max_leaf_records(page_size: usize) -> usize {
    (page_size - HEADER_SIZE) / 16
}

#[inline]
pub(crate) fn get_u64(buf: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
}

#[inline]
pub(crate) fn put_u64(buf: &mut [u8], off: usize, v: u64) {
    buf[off..off + 8].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn header(buf: &[u8]) -> (u8, u8, usize, PageId) {
    let count = u16::from_le_bytes([buf[2], buf[3]]) as usize;
    (buf[0], buf[1], count, PageId(get_u64(buf, 8)))
}

pub(crate) fn write_header(buf: &mut [u8], kind: u8, segment: u8, count: usize, next: PageId) {
    buf[0] = kind;
    buf[1] = segment;
    buf[2..4].copy_from_slice(&(count as u16).to_le_bytes());
    buf[4..8].fill(0);
    put_u64(buf, 8, next.0);
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InternalNode {
    pub keys: Vec<Key>,
    pub children: Vec<PageId>,
}

impl InternalNode {
    /// Index of the child whose key interval `[K_{i-1}, K_i)` holds `key`.
    pub fn child_index(&self, key: Key) -> usize {
        self.keys.partition_point(|&k| k <= key)
    }

    /// Half-open key interval covered by child `i`, `None` meaning unbounded.
    pub fn child_bounds(&self, i: usize) -> (Option<Key>, Option<Key>) {
        let lo = if i == 0 { None } else { Some(self.keys[i - 1]) };
        let hi = self.keys.get(i).copied();
        (lo, hi)
    }

    pub fn decode(page: PageId, buf: &[u8]) -> Result<Self> {
        let (kind, _, count, _) = header(buf);
        if kind != KIND_INTERNAL {
            return Err(Error::corrupt(
                page,
                format!("expected internal node, found kind {kind}"),
            ));
        }
        if HEADER_SIZE + 8 + count * 16 > buf.len() {
            return Err(Error::corrupt(page, "internal node count overflows page"));
        }
        let mut keys = Vec::with_capacity(count);
        let mut children = Vec::with_capacity(count + 1);
        children.push(PageId(get_u64(buf, HEADER_SIZE)));
        for i in 0..count {
            let off = HEADER_SIZE + 8 + i * 16;
            keys.push(get_u64(buf, off));
            children.push(PageId(get_u64(buf, off + 8)));
        }
        Ok(InternalNode { keys, children })
    }

    pub fn encode_into(&self, buf: &mut [u8]) {
        debug_assert_eq!(self.children.len(), self.keys.len() + 1);
        buf.fill(0);
        write_header(buf, KIND_INTERNAL, 0, self.keys.len(), PageId::NIL);
        put_u64(buf, HEADER_SIZE, self.children[0].0);
        for (i, (&k, &c)) in self.keys.iter().zip(&self.children[1..]).enumerate() {
            let off = HEADER_SIZE + 8 + i * 16;
            put_u64(buf, off, k);
            put_u64(buf, off + 8, c.0);
        }
    }

    pub fn encode(&self, page_size: usize) -> Vec<u8> {
        let mut buf = vec![0u8; page_size];
        self.encode_into(&mut buf);
        buf
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafNode {
    pub records: Vec<IndexRecord>,
    pub next: PageId,
}

impl Default for LeafNode {
    fn default() -> Self {
        LeafNode {
            records: Vec::new(),
            next: PageId::NIL,
        }
    }
}

impl LeafNode {
    pub fn decode(page: PageId, buf: &[u8]) -> Result<Self> {
        let (kind, _, count, next) = header(buf);
        if kind != KIND_LEAF {
            return Err(Error::corrupt(page, format!("expected leaf, found kind {kind}")));
        }
        if HEADER_SIZE + count * 16 > buf.len() {
            return Err(Error::corrupt(page, "leaf count overflows page"));
        }
        let records = (0..count)
            .map(|i| {
                let off = HEADER_SIZE + i * 16;
                IndexRecord::new(get_u64(buf, off), get_u64(buf, off + 8))
            })
            .collect();
        Ok(LeafNode { records, next })
    }

    pub fn encode_into(&self, buf: &mut [u8]) {
        buf.fill(0);
        write_header(buf, KIND_LEAF, 0, self.records.len(), self.next);
        for (i, r) in self.records.iter().enumerate() {
            let off = HEADER_SIZE + i * 16;
            put_u64(buf, off, r.key);
            put_u64(buf, off + 8, r.ptr);
        }
    }

    pub fn encode(&self, page_size: usize) -> Vec<u8> {
        let mut buf = vec![0u8; page_size];
        self.encode_into(&mut buf);
        buf
    }
}

/// Node kind stored at byte 0 of a page.
pub fn page_kind(buf: &[u8]) -> u8 {
    buf[0]
}

/// Splits `n` items into `k = ceil(n / max)` nearly equal parts.
pub(crate) fn split_sizes(n: usize, max: usize) -> Vec<usize> {
    let k = n.div_ceil(max).max(1);
    even_parts(n, k)
}

pub(crate) fn even_parts(n: usize, k: usize) -> Vec<usize> {
    let (base, extra) = (n / k, n % k);
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}
