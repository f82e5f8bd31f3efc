//! The operation queue: an in-memory array of tagged records with a sorted
//! prefix and an unsorted, append-only tail.

use super::entry::OpqEntry;
use crate::Key;

/// A queued entry with its append sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub entry: OpqEntry,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct OpQueue {
    slots: Vec<Slot>,
    sorted_offset: usize,
    since_sort: usize,
    speriod: usize,
    capacity: usize,
    next_seq: u64,
}

impl OpQueue {
    pub fn new(capacity: usize, speriod: usize) -> Self {
        OpQueue {
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            sorted_offset: 0,
            since_sort: 0,
            speriod: speriod.max(1),
            capacity: capacity.max(1),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sorted_offset(&self) -> usize {
        self.sorted_offset
    }

    /// Appends to the tail; every `speriod` appends the tail is sorted and
    /// merged into the sorted prefix. The caller flushes a full queue first.
    pub fn append(&mut self, entry: OpqEntry) {
        debug_assert!(!self.is_full());
        self.slots.push(Slot {
            entry,
            seq: self.next_seq,
        });
        self.next_seq += 1;
        self.since_sort += 1;
        if self.since_sort >= self.speriod {
            self.sort_merge();
        }
    }

    /// Sorts the tail and merges it into the prefix. Stable: equal keys keep
    /// append order.
    pub fn sort_merge(&mut self) {
        self.since_sort = 0;
        if self.sorted_offset == self.slots.len() {
            return;
        }
        let mut tail = self.slots.split_off(self.sorted_offset);
        tail.sort_by_key(|s| s.entry.key());
        if self.slots.is_empty() {
            self.slots = tail;
        } else {
            let head = std::mem::take(&mut self.slots);
            let mut merged = Vec::with_capacity(head.len() + tail.len());
            let (mut a, mut b) = (head.into_iter().peekable(), tail.into_iter().peekable());
            loop {
                let take_head = match (a.peek(), b.peek()) {
                    (Some(x), Some(y)) => x.entry.key() <= y.entry.key(),
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => break,
                };
                merged.push(if take_head { a.next() } else { b.next() }.unwrap());
            }
            self.slots = merged;
        }
        self.sorted_offset = self.slots.len();
    }

    fn sorted_run(&self, start: Key, end: Key) -> &[Slot] {
        let sorted = &self.slots[..self.sorted_offset];
        let lo = sorted.partition_point(|s| s.entry.key() < start);
        let hi = sorted.partition_point(|s| s.entry.key() < end);
        &sorted[lo..hi]
    }

    /// Entries for `key` in append order: binary search over the sorted
    /// prefix, then a linear scan of the tail.
    pub fn search(&self, key: Key) -> Vec<OpqEntry> {
        if key == Key::MAX {
            return Vec::new();
        }
        self.range(key, key + 1)
    }

    /// Entries with `start <= key < end`; for each key, in append order.
    pub fn range(&self, start: Key, end: Key) -> Vec<OpqEntry> {
        let mut out: Vec<OpqEntry> = self.sorted_run(start, end).iter().map(|s| s.entry).collect();
        out.extend(
            self.slots[self.sorted_offset..]
                .iter()
                .filter(|s| (start..end).contains(&s.entry.key()))
                .map(|s| s.entry),
        );
        out
    }

    /// Sorts, then removes and returns the `min(bcnt, len)` lowest-key entries.
    pub fn take_lowest(&mut self, bcnt: usize) -> Vec<Slot> {
        self.sort_merge();
        let n = bcnt.min(self.slots.len());
        let rest = self.slots.split_off(n);
        let taken = std::mem::replace(&mut self.slots, rest);
        self.sorted_offset = self.slots.len();
        taken
    }

    /// Every queued entry in append order.
    pub fn in_append_order(&self) -> Vec<OpqEntry> {
        let mut slots = self.slots.clone();
        slots.sort_by_key(|s| s.seq);
        slots.into_iter().map(|s| s.entry).collect()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.sorted_offset = 0;
        self.since_sort = 0;
    }
}
