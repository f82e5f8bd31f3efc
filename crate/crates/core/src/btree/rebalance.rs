//! Sibling merge / redistribution shared by both tree variants.

use super::node::{IndexRecord, InternalNode};
use crate::Key;

/// Merges or redistributes two adjacent leaves' sorted records.
///
/// Returns `None` if everything fit into `left` (and `right` is now empty),
/// otherwise the new separator after splitting the records evenly.
pub(crate) fn fix_leaves(left: &mut Vec<IndexRecord>, right: &mut Vec<IndexRecord>, max: usize) -> Option<Key> {
    if left.len() + right.len() <= max {
        left.append(right);
        return None;
    }
    left.append(right);
    let half = left.len() / 2;
    *right = left.split_off(half);
    Some(right[0].key)
}

/// Internal-node counterpart of [`fix_leaves`]; `sep` is the parent key
/// between the two nodes and `max` the fanout.
pub(crate) fn fix_internals(left: &mut InternalNode, sep: Key, right: &mut InternalNode, max: usize) -> Option<Key> {
    left.keys.push(sep);
    left.keys.append(&mut right.keys);
    left.children.append(&mut right.children);
    if left.children.len() <= max {
        return None;
    }
    let left_ptrs = left.children.len() / 2;
    right.children = left.children.split_off(left_ptrs);
    let mut tail = left.keys.split_off(left_ptrs - 1);
    let new_sep = tail.remove(0);
    right.keys = tail;
    Some(new_sep)
}

/// Splits an overfull internal node into pieces of at most `max` pointers.
/// Returns the pieces and the separators between consecutive pieces.
pub(crate) fn split_internal(node: InternalNode, max: usize) -> (Vec<InternalNode>, Vec<Key>) {
    let sizes = super::node::split_sizes(node.children.len(), max);
    let mut pieces = Vec::with_capacity(sizes.len());
    let mut seps = Vec::with_capacity(sizes.len() - 1);
    let mut start = 0;
    for (j, &s) in sizes.iter().enumerate() {
        let children = node.children[start..start + s].to_vec();
        let keys = node.keys[start..start + s - 1].to_vec();
        if j + 1 < sizes.len() {
            seps.push(node.keys[start + s - 1]);
        }
        pieces.push(InternalNode { keys, children });
        start += s;
    }
    (pieces, seps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::PageId;

    fn recs(keys: &[u64]) -> Vec<IndexRecord> {
        keys.iter().map(|&k| IndexRecord::new(k, k * 10)).collect()
    }

    fn inode(keys: &[u64], first_child: u64) -> InternalNode {
        InternalNode {
            keys: keys.to_vec(),
            children: (0..=keys.len() as u64).map(|i| PageId(first_child + i)).collect(),
        }
    }

    #[test]
    fn leaves_merge_when_fitting() {
        let (mut l, mut r) = (recs(&[1]), recs(&[5, 6]));
        assert_eq!(fix_leaves(&mut l, &mut r, 4), None);
        assert_eq!(l, recs(&[1, 5, 6]));
        assert!(r.is_empty());
    }

    #[test]
    fn leaves_redistribute() {
        let (mut l, mut r) = (recs(&[1]), recs(&[5, 6, 7, 8]));
        assert_eq!(fix_leaves(&mut l, &mut r, 4), Some(6));
        assert_eq!(l, recs(&[1, 5]));
        assert_eq!(r, recs(&[6, 7, 8]));
    }

    #[test]
    fn internals_merge_and_redistribute() {
        let mut l = inode(&[10], 0);
        let mut r = inode(&[30], 10);
        assert_eq!(fix_internals(&mut l, 20, &mut r, 4), None);
        assert_eq!(l.keys, vec![10, 20, 30]);
        assert_eq!(l.children.len(), 4);

        let mut l = inode(&[], 0);
        let mut r = inode(&[30, 40, 50], 10);
        let sep = fix_internals(&mut l, 20, &mut r, 4).unwrap();
        assert_eq!(sep, 30);
        assert_eq!(l.keys, vec![20]);
        assert_eq!(l.children, vec![PageId(0), PageId(10)]);
        assert_eq!(r.keys, vec![40, 50]);
        assert_eq!(r.children, vec![PageId(11), PageId(12), PageId(13)]);
    }

    #[test]
    fn split_internal_pieces() {
        let node = inode(&[10, 20, 30, 40], 0);
        let (pieces, seps) = split_internal(node, 4);
        assert_eq!(seps, vec![30]);
        assert_eq!(pieces[0].keys, vec![10, 20]);
        assert_eq!(pieces[1].keys, vec![40]);
        assert_eq!(pieces[1].children, vec![PageId(3), PageId(4)]);
    }
}
