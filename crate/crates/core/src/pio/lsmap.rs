//! Compact in-memory map from leaf page id to the id of its last leaf
//! segment, stored as `id - floor(L/2)` in a fixed number of bits.

use crate::device::PageId;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LsMap {
    segments: u32,
    bits: u32,
    words: Vec<u64>,
}

impl LsMap {
    pub fn new(segments: u32) -> Self {
        let half_up = segments.div_ceil(2).max(1);
        let bits = (u32::BITS - (half_up - 1).leading_zeros()).max(1);
        LsMap {
            segments,
            bits,
            words: Vec::new(),
        }
    }

    /// Bits stored per leaf.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Smallest encodable segment id, `floor(L/2)`.
    pub fn floor(&self) -> u32 {
        self.segments / 2
    }

    fn locate(&self, leaf: PageId) -> (usize, u32) {
        let bit = leaf.0 * self.bits as u64;
        ((bit / 64) as usize, (bit % 64) as u32)
    }

    pub fn get(&self, leaf: PageId) -> u32 {
        let (w, off) = self.locate(leaf);
        let mask = (1u64 << self.bits) - 1;
        let word = self.words.get(w).copied().unwrap_or(0);
        let mut v = word >> off;
        if off + self.bits > 64 {
            v |= self.words.get(w + 1).copied().unwrap_or(0) << (64 - off);
        }
        (v & mask) as u32 + self.floor()
    }

    pub fn set(&mut self, leaf: PageId, id: u32) -> Result<()> {
        if id < self.floor() || id >= self.segments {
            return Err(Error::InvalidInput(format!(
                "segment id {id} not encodable for L = {}",
                self.segments
            )));
        }
        let v = (id - self.floor()) as u64;
        let (w, off) = self.locate(leaf);
        if self.words.len() < w + 2 {
            self.words.resize(w + 2, 0);
        }
        let mask = (1u64 << self.bits) - 1;
        self.words[w] = (self.words[w] & !(mask << off)) | (v << off);
        if off + self.bits > 64 {
            let spill = off + self.bits - 64;
            let hi_mask = (1u64 << spill) - 1;
            self.words[w + 1] = (self.words[w + 1] & !hi_mask) | (v >> (64 - off));
        }
        Ok(())
    }

    /// Stores `max(id, floor(L/2))`; young leaves whose data ends before the
    /// middle segment append from there.
    pub fn set_clamped(&mut self, leaf: PageId, id: u32) {
        self.set(leaf, id.max(self.floor())).unwrap();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(segments: u32, bytes: &[u8]) -> Self {
        let mut map = LsMap::new(segments);
        map.words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        map
    }
}
