//! Page 0 of every index file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PIOBTREE"
//! 8       4     format version
//! 12      1     index kind (1 = baseline B+-tree, 2 = PIO B-tree)
//! 13      1     clean-shutdown flag
//! 14      2     key width in bytes (8)
//! 16      2     data pointer width in bytes (8)
//! 18      2     reserved
//! 20      4     page size
//! 24      4     fanout F (max pointers per internal node)
//! 28      4     leaf records per page
//! 32      8     root page id
//! 40      4     height (levels, root to leaf)
//! 44      4     leaf segments per leaf (L)
//! 48      4     OPQ pages (O)
//! 52      4     PioMax
//! 56      4     speriod
//! 60      4     bcnt
//! 64      8     LSMap first page (u64::MAX = none)
//! 72      4     LSMap page count
//! ```

use crate::device::PageId;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PIOBTREE";
const VERSION: u32 = 1;
pub const SUPERBLOCK_PAGE: PageId = PageId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Baseline = 1,
    Pio = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Superblock {
    pub kind: IndexKind,
    pub clean: bool,
    pub page_size: u32,
    pub fanout: u32,
    pub leaf_capacity: u32,
    pub root: PageId,
    pub height: u32,
    pub leaf_segments: u32,
    pub opq_pages: u32,
    pub pio_max: u32,
    pub speriod: u32,
    pub bcnt: u32,
    pub lsmap_start: PageId,
    pub lsmap_pages: u32,
}

fn u32_at(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn u64_at(buf: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
}

impl Superblock {
    pub fn encode(&self, page_size: usize) -> Vec<u8> {
        let mut b = vec![0u8; page_size];
        b[0..8].copy_from_slice(MAGIC);
        b[8..12].copy_from_slice(&VERSION.to_le_bytes());
        b[12] = self.kind as u8;
        b[13] = u8::from(self.clean);
        b[14..16].copy_from_slice(&8u16.to_le_bytes());
        b[16..18].copy_from_slice(&8u16.to_le_bytes());
        b[20..24].copy_from_slice(&self.page_size.to_le_bytes());
        b[24..28].copy_from_slice(&self.fanout.to_le_bytes());
        b[28..32].copy_from_slice(&self.leaf_capacity.to_le_bytes());
        b[32..40].copy_from_slice(&self.root.0.to_le_bytes());
        b[40..44].copy_from_slice(&self.height.to_le_bytes());
        b[44..48].copy_from_slice(&self.leaf_segments.to_le_bytes());
        b[48..52].copy_from_slice(&self.opq_pages.to_le_bytes());
        b[52..56].copy_from_slice(&self.pio_max.to_le_bytes());
        b[56..60].copy_from_slice(&self.speriod.to_le_bytes());
        b[60..64].copy_from_slice(&self.bcnt.to_le_bytes());
        b[64..72].copy_from_slice(&self.lsmap_start.0.to_le_bytes());
        b[72..76].copy_from_slice(&self.lsmap_pages.to_le_bytes());
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if &buf[0..8] != MAGIC {
            return Err(Error::corrupt(SUPERBLOCK_PAGE, "bad magic"));
        }
        if u32_at(buf, 8) != VERSION {
            return Err(Error::corrupt(SUPERBLOCK_PAGE, "unsupported version"));
        }
        let kind = match buf[12] {
            1 => IndexKind::Baseline,
            2 => IndexKind::Pio,
            k => return Err(Error::corrupt(SUPERBLOCK_PAGE, format!("unknown index kind {k}"))),
        };
        Ok(Superblock {
            kind,
            clean: buf[13] != 0,
            page_size: u32_at(buf, 20),
            fanout: u32_at(buf, 24),
            leaf_capacity: u32_at(buf, 28),
            root: PageId(u64_at(buf, 32)),
            height: u32_at(buf, 40),
            leaf_segments: u32_at(buf, 44),
            opq_pages: u32_at(buf, 48),
            pio_max: u32_at(buf, 52),
            speriod: u32_at(buf, 56),
            bcnt: u32_at(buf, 60),
            lsmap_start: PageId(u64_at(buf, 64)),
            lsmap_pages: u32_at(buf, 72),
        })
    }
}
