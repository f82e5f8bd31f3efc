//! Append-only leaves made of `L` contiguous leaf-segment pages.
//!
//! Every segment page uses the common node header with kind 3, the segment
//! index in byte 1, the segment's entry count, and the next-leaf link (kept
//! identical in all segments of a leaf). Entries are 16-byte [`OpqEntry`]
//! records in arrival order; reading segments 0..L in order yields the leaf's
//! chronological log.

use super::entry::{shrink, OpqEntry};
use crate::btree::node::{header, write_header, HEADER_SIZE, KIND_SEGMENT};
use crate::btree::IndexRecord;
use crate::device::PageId;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PioLeaf {
    pub segments: Vec<Vec<OpqEntry>>,
    pub next: PageId,
}

/// Decodes one segment page, checking it is segment `index` of a leaf.
pub fn decode_segment(page: PageId, index: u32, buf: &[u8]) -> Result<(Vec<OpqEntry>, PageId)> {
    let (kind, seg, count, next) = header(buf);
    if kind != KIND_SEGMENT || seg as u32 != index {
        return Err(Error::corrupt(
            page,
            format!("expected leaf segment {index}, found kind {kind} segment {seg}"),
        ));
    }
    if HEADER_SIZE + count * 16 > buf.len() {
        return Err(Error::corrupt(page, "segment count overflows page"));
    }
    let entries = (0..count)
        .map(|i| {
            let off = HEADER_SIZE + i * 16;
            OpqEntry::decode(&buf[off..off + 16]).ok_or_else(|| Error::corrupt(page, "bad entry flag"))
        })
        .collect::<Result<_>>()?;
    Ok((entries, next))
}

pub fn encode_segment(index: u32, entries: &[OpqEntry], next: PageId, page_size: usize) -> Vec<u8> {
    let mut buf = vec![0u8; page_size];
    write_header(&mut buf, KIND_SEGMENT, index as u8, entries.len(), next);
    for (i, e) in entries.iter().enumerate() {
        let off = HEADER_SIZE + i * 16;
        e.encode_into(&mut buf[off..off + 16]);
    }
    buf
}

impl PioLeaf {
    pub fn empty(segments: u32, next: PageId) -> Self {
        PioLeaf {
            segments: vec![Vec::new(); segments as usize],
            next,
        }
    }

    /// A compacted leaf holding `records` as insert entries, packed from
    /// segment 0 with `per_segment` entries each.
    pub fn from_records(records: &[IndexRecord], segments: u32, per_segment: usize, next: PageId) -> Self {
        let mut leaf = Self::empty(segments, next);
        for (i, chunk) in records.chunks(per_segment).enumerate() {
            leaf.segments[i] = chunk.iter().map(|r| OpqEntry::insert(r.key, r.ptr)).collect();
        }
        leaf
    }

    pub fn decode(start: PageId, segments: u32, page_size: usize, buf: &[u8]) -> Result<Self> {
        let mut leaf = Self::empty(segments, PageId::NIL);
        for i in 0..segments {
            let page = start.offset(i as u64);
            let (entries, next) = decode_segment(page, i, &buf[i as usize * page_size..(i as usize + 1) * page_size])?;
            if i == 0 {
                leaf.next = next;
            } else if next != leaf.next {
                return Err(Error::corrupt(page, "segments disagree on next-leaf link"));
            }
            leaf.segments[i as usize] = entries;
        }
        Ok(leaf)
    }

    pub fn encode(&self, page_size: usize) -> Vec<u8> {
        let mut buf = Vec::with_capacity(page_size * self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            buf.extend(encode_segment(i as u32, s, self.next, page_size));
        }
        buf
    }

    /// Index of the last non-empty segment (0 for an empty leaf).
    pub fn last_segment(&self) -> u32 {
        self.segments.iter().rposition(|s| !s.is_empty()).unwrap_or(0) as u32
    }

    pub fn entry_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn log(&self) -> impl Iterator<Item = &OpqEntry> {
        self.segments.iter().flatten()
    }

    /// Surviving records after cancelling the log.
    pub fn records(&self) -> Vec<IndexRecord> {
        shrink(self.log())
    }
}
