use pio_core::bench::{Index, IndexKind};
use pio_core::recovery::{MemLog, Wal};
use pio_core::{BPlusTree, Device, DeviceConfig, IndexRecord, PioBTree, PioConfig, MAX_KEY};

fn records(n: u64) -> Vec<IndexRecord> {
    (0..n).map(|i| IndexRecord::new(i * 3, i)).collect()
}

#[test]
fn both_indexes_reopen_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PioConfig::for_page_size(4096);
    for kind in IndexKind::ALL {
        let path = dir.path().join(format!("{kind}.dat"));
        let dev = Device::file(DeviceConfig::default(), &path).unwrap();
        let mut index = Index::bulk_load(kind, dev, &cfg, &records(20_000), 0.7).unwrap();
        index.insert(1, 77).unwrap();
        index.delete(3).unwrap();
        index.update(6, 88).unwrap();
        index.close().unwrap();

        let dev = Device::file(DeviceConfig::default(), &path).unwrap();
        let mut index = Index::open(dev, 64).unwrap();
        assert_eq!(index.kind(), kind);
        assert_eq!(index.audit().unwrap(), 20_000);
        assert_eq!(index.search(1).unwrap(), Some(77));
        assert_eq!(index.search(3).unwrap(), None);
        assert_eq!(index.search(6).unwrap(), Some(88));
        let all = index.range(0, MAX_KEY).unwrap();
        assert_eq!(all.len(), 20_000);
        assert!(all.windows(2).all(|w| w[0].key < w[1].key));
    }
}

#[test]
fn open_rejects_the_other_kind() {
    let mut dev = Device::emulated(DeviceConfig::default()).unwrap();
    dev = BPlusTree::bulk_load(dev, PioConfig::for_page_size(4096).tree, &records(100), 0.7)
        .unwrap()
        .close()
        .unwrap();
    assert!(PioBTree::open(dev, 0).is_err());
}

#[test]
fn logged_entries_survive_a_crash() {
    let mut cfg = PioConfig::for_page_size(4096);
    cfg.opq_pages = 2;
    let dev = Device::emulated(DeviceConfig::default()).unwrap();
    let mut tree = PioBTree::bulk_load(dev, cfg, &records(5_000), 0.7).unwrap();
    let (wal, _) = Wal::open(Box::new(MemLog::new())).unwrap();
    tree.attach_wal(wal);
    for i in 0..1_500u64 {
        tree.insert(i * 3 + 1, i).unwrap();
    }
    tree.delete(0).unwrap();
    let (dev, log) = tree.crash().unwrap();

    let (mut tree, report) = PioBTree::recover(dev, log, 16).unwrap();
    assert!(report.redone_entries > 0);
    tree.audit().unwrap();
    let got = tree.records().unwrap();
    assert_eq!(got.len(), 5_000 + 1_500 - 1);
    assert_eq!(tree.point_search(0).unwrap(), None);
    assert_eq!(tree.point_search(1_499 * 3 + 1).unwrap(), Some(1_499));
}
