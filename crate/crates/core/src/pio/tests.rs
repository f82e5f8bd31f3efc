use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::btree::IndexRecord;
use crate::{DataPtr, Device, DeviceConfig, PageId};

fn dev() -> Device {
    Device::emulated(DeviceConfig {
        page_count: 1 << 18,
        ..DeviceConfig::default()
    })
    .unwrap()
}

fn recs(keys: &[Key]) -> Vec<IndexRecord> {
    keys.iter().map(|&k| IndexRecord::new(k, k * 10)).collect()
}

fn t1_config() -> PioConfig {
    PioConfig {
        tree: TreeConfig::small(4, 4),
        leaf_segments: 1,
        opq_pages: 4,
        pio_max: 64,
        speriod: 5,
        bcnt: 100,
    }
}

/// F = 4, four records per leaf, keys {1,5,...,35} at half fill.
fn t1() -> PioBTree {
    let keys = [1, 5, 10, 15, 20, 25, 30, 35];
    PioBTree::bulk_load(dev(), t1_config(), &recs(&keys), 0.5).unwrap()
}

fn leaf_keys(v: &[LeafView]) -> Vec<Vec<Key>> {
    v.iter().map(|l| l.records.iter().map(|r| r.key).collect()).collect()
}

#[test]
fn search_needed_predicate() {
    let bounds = [
        (None, Some(10)),
        (Some(10), Some(20)),
        (Some(20), Some(30)),
        (Some(30), None),
    ];
    assert!(check_search_needed(bounds[0].0, bounds[0].1, &[5]));
    assert!(!check_search_needed(bounds[1].0, bounds[1].1, &[5, 35]));
    assert!(check_search_needed(bounds[3].0, bounds[3].1, &[35]));
}

#[test]
fn t1_shape() {
    let mut t = t1();
    assert_eq!(t.height(), 2);
    assert_eq!(t.leaf_pages().unwrap().len(), 4);
    assert_eq!(t.audit().unwrap(), 8);
}

#[test]
fn mpsearch_batches_leaf_reads() {
    let mut t = t1();
    let before = t.device().stats();
    let got = t.mpsearch(&[25, 5]).unwrap();
    let d = t.device().stats().since(&before);
    assert_eq!(leaf_keys(&got), vec![vec![1, 5], vec![20, 25]]);
    assert_eq!(d.read_batches, 2);
    assert_eq!(d.pages_read, 3);

    assert_eq!(leaf_keys(&t.mpsearch(&[5]).unwrap()), vec![vec![1, 5]]);

    let mut cfg = t1_config();
    cfg.pio_max = 2;
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&[1, 5, 10, 15, 20, 25, 30, 35]), 0.5).unwrap();
    let before = t.device().stats();
    let got = t.mpsearch(&[1, 15, 35]).unwrap();
    let d = t.device().stats().since(&before);
    assert_eq!(leaf_keys(&got), vec![vec![1, 5], vec![10, 15], vec![30, 35]]);
    assert_eq!(d.read_batches, 3);
}

#[test]
fn prange_examples() {
    let mut t = t1();
    let before = t.device().stats();
    let got: Vec<Key> = t.prange_search(12, 27).unwrap().iter().map(|r| r.key).collect();
    assert_eq!(got, vec![15, 20, 25]);
    let d = t.device().stats().since(&before);
    assert_eq!((d.read_batches, d.pages_read), (2, 3));

    let before = t.device().stats();
    assert!(t.prange_search(5, 5).unwrap().is_empty());
    assert_eq!(t.device().stats().since(&before).pages_read, 0);

    let mut cfg = t1_config();
    cfg.pio_max = 2;
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&[1, 5, 10, 15, 20, 25, 30, 35]), 0.5).unwrap();
    let before = t.device().stats();
    assert_eq!(t.prange_search(0, 100).unwrap().len(), 8);
    assert_eq!(t.device().stats().since(&before).read_batches, 1 + 2);
}

#[test]
fn point_search_applies_queue() {
    let mut t = t1();
    assert_eq!(t.point_search(5).unwrap(), Some(50));
    t.delete(5).unwrap();
    assert_eq!(t.point_search(5).unwrap(), None);
    t.insert(7, 3).unwrap();
    assert_eq!(t.point_search(7).unwrap(), Some(3));
    t.update(8, 1).unwrap();
    assert_eq!(t.point_search(8).unwrap(), None);
    t.update(10, 1).unwrap();
    assert_eq!(t.point_search(10).unwrap(), Some(1));
    assert_eq!(t.device().stats().pages_written, 0);
}

#[test]
fn bupdate_appends_to_last_segment() {
    let mut t = t1();
    t.insert(7, 70).unwrap();
    t.insert(22, 220).unwrap();
    let before = t.device().stats();
    t.flush_all().unwrap();
    let d = t.device().stats().since(&before);
    // root, then one batch of two last-segment reads; one batch of two writes
    assert_eq!((d.read_batches, d.pages_read), (2, 3));
    assert_eq!((d.write_batches, d.pages_written), (1, 2));
    let leaves = t.leaf_pages().unwrap();
    let l0 = t.read_leaf(leaves[0]).unwrap();
    assert_eq!(l0.segments[0].last(), Some(&OpqEntry::insert(7, 70)));
    let l2 = t.read_leaf(leaves[2]).unwrap();
    assert_eq!(l2.segments[0].last(), Some(&OpqEntry::insert(22, 220)));
    assert_eq!(t.audit().unwrap(), 10);
}

#[test]
fn full_leaf_shrinks_then_splits() {
    let mut t = t1();
    for k in [2, 3, 4] {
        t.insert(k, k).unwrap();
    }
    t.flush_all().unwrap();
    let leaves = t.leaf_pages().unwrap();
    assert_eq!(leaves.len(), 5);
    assert_eq!(t.audit().unwrap(), 11);
    let mut t2 = t1();
    t2.insert(2, 2).unwrap();
    t2.delete(2).unwrap();
    t2.insert(3, 3).unwrap();
    t2.flush_all().unwrap();
    assert_eq!(t2.leaf_pages().unwrap().len(), 4);
    let leaves = t2.leaf_pages().unwrap();
    assert_eq!(t2.read_leaf(leaves[0]).unwrap().segments[0].len(), 3);
    assert_eq!(t2.audit().unwrap(), 9);
}

#[test]
fn empty_flush_is_free() {
    let mut t = t1();
    let before = t.device().stats();
    t.flush_all().unwrap();
    assert_eq!(t.device().stats().since(&before), Default::default());
}

#[test]
fn opq_full_triggers_flush() {
    let mut cfg = t1_config();
    cfg.opq_pages = 1;
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&[1, 5, 10, 15, 20, 25, 30, 35]), 0.5).unwrap();
    for k in [2, 11, 21] {
        t.insert(k, k).unwrap();
    }
    assert_eq!(t.opq().len(), 3);
    assert_eq!(t.device().stats().pages_written, 0);
    t.insert(31, 31).unwrap();
    assert_eq!(t.opq().len(), 1);
    assert!(t.device().stats().pages_written > 0);
}

#[test]
fn partial_flush_takes_lowest_keys() {
    let mut cfg = t1_config();
    cfg.bcnt = 2;
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&[1, 5, 10, 15, 20, 25, 30, 35]), 0.5).unwrap();
    for k in [30, 2, 12, 2] {
        t.update(k, 9).unwrap();
    }
    assert_eq!(t.flush_partial().unwrap(), 2);
    let left: Vec<Key> = t.opq().slots().iter().map(|s| s.entry.key()).collect();
    assert_eq!(left, vec![12, 30]);
}

#[test]
fn leaf_segments_append_and_lsmap() {
    let mut cfg = t1_config();
    cfg.leaf_segments = 4;
    cfg.tree = TreeConfig::small(4, 3);
    let keys: Vec<Key> = (0..40).map(|k| k * 10).collect();
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&keys), 0.5).unwrap();
    t.audit().unwrap();
    let leaf = t.leaf_pages().unwrap()[0];
    assert_eq!(t.lsmap().get(leaf), 2);
    for k in 1..5 {
        t.insert(k, k).unwrap();
    }
    let before = t.device().stats();
    t.flush_all().unwrap();
    let d = t.device().stats().since(&before);
    assert_eq!(d.pages_read as usize, t.height());
    assert_eq!(d.write_batches, 1);
    t.audit().unwrap();
    assert_eq!(t.point_search(3).unwrap(), Some(3));
}

#[test]
fn close_and_reopen() {
    let mut cfg = t1_config();
    cfg.leaf_segments = 3;
    let mut t = PioBTree::create(dev(), cfg).unwrap();
    for k in 0..300 {
        t.insert(k * 7 % 1000, k).unwrap();
    }
    let want = t.records().unwrap();
    let dev = t.close().unwrap();
    let mut t = PioBTree::open(dev, 16).unwrap();
    assert_eq!(t.records().unwrap(), want);
    t.audit().unwrap();
    // unclean: lsmap rebuilt from leaves
    t.insert(5000, 1).unwrap();
    t.flush_all().unwrap();
    let dev = t.into_device();
    let mut t = PioBTree::open(dev, 0).unwrap();
    assert_eq!(t.records().unwrap().len(), want.len() + 1);
    t.audit().unwrap();
}

#[test]
fn opening_a_baseline_tree_fails() {
    let t = crate::BPlusTree::create(dev(), TreeConfig::small(4, 4)).unwrap();
    let dev = t.close().unwrap();
    assert!(PioBTree::open(dev, 0).is_err());
}

#[test]
fn flush_never_reads_internal_node_twice() {
    let mut cfg = t1_config();
    cfg.tree = TreeConfig::small(5, 4);
    cfg.opq_pages = 64;
    cfg.bcnt = 256;
    cfg.pio_max = 3;
    let keys: Vec<Key> = (0..400).map(|k| k * 4).collect();
    let mut t = PioBTree::bulk_load(dev(), cfg, &recs(&keys), 0.7).unwrap();
    for k in 0..200u64 {
        t.update(k * 8, 1).unwrap();
    }
    t.reset_profile();
    t.flush_all().unwrap();
    let internal_nodes = t.leaf_pages().unwrap().len();
    let profile = t.profile().to_vec();
    assert_eq!(profile[0].nodes, 1);
    assert_eq!(
        profile.last().unwrap().nodes as usize,
        internal_nodes.min(profile.last().unwrap().nodes as usize)
    );
    for p in &profile {
        assert_eq!(p.entries, 200);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Insert(Key, DataPtr),
    Delete(Key),
    Update(Key, DataPtr),
    Search(Key),
    Range(Key, Key),
    Flush,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..300u64, 0..1000u64).prop_map(|(k, p)| Op::Insert(k, p)),
        3 => (0..300u64).prop_map(Op::Delete),
        1 => (0..300u64, 0..1000u64).prop_map(|(k, p)| Op::Update(k, p)),
        1 => (0..300u64).prop_map(Op::Search),
        1 => (0..300u64, 0..50u64).prop_map(|(k, w)| Op::Range(k, k + w)),
        1 => Just(Op::Flush),
    ]
}

fn model_apply(m: &mut BTreeMap<Key, DataPtr>, e: OpqEntry) {
    let mut live = m.get(&e.key()).copied();
    apply(&mut live, &e);
    match live {
        Some(p) => m.insert(e.key(), p),
        None => m.remove(&e.key()),
    };
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn matches_ordered_map(
        fanout in 3usize..7,
        per in 3usize..6,
        l in 1u32..5,
        opq in 1usize..4,
        bcnt in 1usize..20,
        pio_max in 1usize..5,
        speriod in 1usize..8,
        ops in prop::collection::vec(op(), 1..400),
    ) {
        let cfg = PioConfig {
            tree: TreeConfig::small(fanout, per).with_pool_pages(4),
            leaf_segments: l,
            opq_pages: opq,
            pio_max,
            speriod,
            bcnt,
        };
        let mut t = PioBTree::create(dev(), cfg).unwrap();
        let mut m = BTreeMap::new();
        for o in ops {
            match o {
                Op::Insert(k, p) => { t.insert(k, p).unwrap(); model_apply(&mut m, OpqEntry::insert(k, p)); }
                Op::Delete(k) => { t.delete(k).unwrap(); model_apply(&mut m, OpqEntry::delete(k)); }
                Op::Update(k, p) => { t.update(k, p).unwrap(); model_apply(&mut m, OpqEntry::update(k, p)); }
                Op::Search(k) => prop_assert_eq!(t.point_search(k).unwrap(), m.get(&k).copied()),
                Op::Range(a, b) => {
                    let got: Vec<(Key, DataPtr)> = t.prange_search(a, b).unwrap().iter().map(|r| (r.key, r.ptr)).collect();
                    let want: Vec<(Key, DataPtr)> = m.range(a..b).map(|(&k, &p)| (k, p)).collect();
                    prop_assert_eq!(got, want);
                }
                Op::Flush => t.flush_all().unwrap(),
            }
        }
        t.audit().unwrap();
        let all: Vec<(Key, DataPtr)> = t.records().unwrap().iter().map(|r| (r.key, r.ptr)).collect();
        prop_assert_eq!(all, m.iter().map(|(&k, &p)| (k, p)).collect::<Vec<_>>());
        t.flush_all().unwrap();
        prop_assert_eq!(t.audit().unwrap(), m.len());
        let keys: Vec<Key> = (0..300).collect();
        let got = t.multi_search(&keys).unwrap();
        for (k, g) in keys.iter().zip(got) {
            prop_assert_eq!(g, m.get(k).copied());
        }
        let _ = PageId::NIL;
    }
}
