//! Tagged index records as stored in the operation queue and in leaf
//! segments.

use std::collections::BTreeMap;

use crate::btree::IndexRecord;
use crate::{DataPtr, Error, Key, Result};

/// Largest data pointer that fits next to the two flag bits.
pub const MAX_PTR: DataPtr = (1 << 62) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpFlag {
    Insert,
    Delete,
    Update,
}

impl OpFlag {
    fn code(self) -> u64 {
        match self {
            OpFlag::Insert => 1,
            OpFlag::Delete => 2,
            OpFlag::Update => 3,
        }
    }

    fn from_code(code: u64) -> Option<Self> {
        match code {
            1 => Some(OpFlag::Insert),
            2 => Some(OpFlag::Delete),
            3 => Some(OpFlag::Update),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            OpFlag::Insert => 'i',
            OpFlag::Delete => 'd',
            OpFlag::Update => 'u',
        }
    }
}

/// An index record tagged with the operation that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpqEntry {
    pub rec: IndexRecord,
    pub op: OpFlag,
}

impl OpqEntry {
    pub fn insert(key: Key, ptr: DataPtr) -> Self {
        OpqEntry {
            rec: IndexRecord::new(key, ptr),
            op: OpFlag::Insert,
        }
    }

    /// Deletes carry no data pointer; they cancel by key.
    pub fn delete(key: Key) -> Self {
        OpqEntry {
            rec: IndexRecord::new(key, 0),
            op: OpFlag::Delete,
        }
    }

    pub fn update(key: Key, ptr: DataPtr) -> Self {
        OpqEntry {
            rec: IndexRecord::new(key, ptr),
            op: OpFlag::Update,
        }
    }

    pub fn key(&self) -> Key {
        self.rec.key
    }

    pub fn validate(&self) -> Result<()> {
        if self.rec.key > crate::MAX_KEY {
            return Err(Error::InvalidInput("key u64::MAX is reserved".into()));
        }
        if self.rec.ptr > MAX_PTR {
            return Err(Error::InvalidInput(format!(
                "data pointer {} exceeds 2^62 - 1",
                self.rec.ptr
            )));
        }
        Ok(())
    }

    /// 16-byte on-page form: key, then pointer with the flag in the top two bits.
    pub fn encode_into(&self, buf: &mut [u8]) {
        buf[..8].copy_from_slice(&self.rec.key.to_le_bytes());
        let word = self.rec.ptr | (self.op.code() << 62);
        buf[8..16].copy_from_slice(&word.to_le_bytes());
    }

    pub fn decode(buf: &[u8]) -> Option<Self> {
        let key = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let word = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        let op = OpFlag::from_code(word >> 62)?;
        Some(OpqEntry {
            rec: IndexRecord::new(key, word & MAX_PTR),
            op,
        })
    }
}

/// Applies one entry to a per-key live value.
///
/// An insert takes effect only if the key is absent, a delete removes the
/// key, and an update (a delete followed by an insert) only rewrites a live
/// record.
#[inline]
pub fn apply(live: &mut Option<DataPtr>, e: &OpqEntry) {
    match e.op {
        OpFlag::Insert => {
            if live.is_none() {
                *live = Some(e.rec.ptr);
            }
        }
        OpFlag::Delete => *live = None,
        OpFlag::Update => {
            if live.is_some() {
                *live = Some(e.rec.ptr);
            }
        }
    }
}

/// Replays a chronological entry log and returns the surviving records in
/// key order. This is the leaf `shrink`.
pub fn shrink<'a>(log: impl IntoIterator<Item = &'a OpqEntry>) -> Vec<IndexRecord> {
    let mut live: BTreeMap<Key, Option<DataPtr>> = BTreeMap::new();
    for e in log {
        apply(live.entry(e.key()).or_default(), e);
    }
    live.into_iter()
        .filter_map(|(k, p)| p.map(|p| IndexRecord::new(k, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_round_trip() {
        for e in [
            OpqEntry::insert(7, MAX_PTR),
            OpqEntry::delete(0),
            OpqEntry::update(u64::MAX - 1, 3),
        ] {
            let mut buf = [0u8; 16];
            e.encode_into(&mut buf);
            assert_eq!(OpqEntry::decode(&buf), Some(e));
        }
        assert_eq!(OpqEntry::decode(&[0u8; 16]), None);
        assert!(OpqEntry::insert(1, MAX_PTR + 1).validate().is_err());
    }

    #[test]
    fn shrink_cancels_pairs() {
        let log = [OpqEntry::insert(7, 70), OpqEntry::delete(7), OpqEntry::insert(8, 80)];
        assert_eq!(shrink(&log), vec![IndexRecord::new(8, 80)]);
    }

    #[test]
    fn shrink_update_rewrites_pointer() {
        let log = [OpqEntry::insert(7, 70), OpqEntry::update(7, 2)];
        assert_eq!(shrink(&log), vec![IndexRecord::new(7, 2)]);
        assert!(shrink(&[OpqEntry::update(9, 1)]).is_empty());
    }

    #[test]
    fn shrink_without_pairs_keeps_records() {
        let log = [OpqEntry::insert(3, 1), OpqEntry::insert(1, 2)];
        assert_eq!(shrink(&log), vec![IndexRecord::new(1, 2), IndexRecord::new(3, 1)]);
    }
}
