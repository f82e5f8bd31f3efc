//! Transactions, checkpoints and restart recovery for the PIO B-tree.
//!
//! An entry enters the operation queue at its commit point: the redo
//! record for an auto-committed operation, or the commit record of an
//! explicit transaction. Room is made in the queue before that point, so no
//! flush ever runs between a commit point and the matching appends. Restart
//! recovery can therefore rebuild the exact queue contents from the log.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::log::{LogRecord, LogStore, Lsn, TxnId, Wal, AUTO_COMMIT};
use super::CrashPoint;
use crate::device::{Device, PageId};
use crate::pio::{OpqEntry, PioBTree};
use crate::{DataPtr, Error, Key, Result};

/// What a restart recovery did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub records: usize,
    pub completed_flushes: usize,
    pub undone_flushes: usize,
    pub undone_pages: usize,
    pub redone_entries: usize,
}

impl PioBTree {
    /// Attaches a write-ahead log; from now on every queued operation is
    /// logged before it is acknowledged and every flush is undoable.
    pub fn attach_wal(&mut self, wal: Wal) {
        self.wal = Some(wal);
    }

    pub fn wal(&self) -> Option<&Wal> {
        self.wal.as_ref()
    }

    pub fn begin(&mut self) -> Result<TxnId> {
        let id = self.next_txn;
        self.next_txn += 1;
        self.txns.insert(id, Vec::new());
        Ok(id)
    }

    pub fn txn_insert(&mut self, txn: TxnId, key: Key, ptr: DataPtr) -> Result<()> {
        self.txn_enqueue(txn, OpqEntry::insert(key, ptr))
    }

    pub fn txn_delete(&mut self, txn: TxnId, key: Key) -> Result<()> {
        self.txn_enqueue(txn, OpqEntry::delete(key))
    }

    pub fn txn_update(&mut self, txn: TxnId, key: Key, ptr: DataPtr) -> Result<()> {
        self.txn_enqueue(txn, OpqEntry::update(key, ptr))
    }

    /// Logs a redo record for `entry` and holds it with the transaction
    /// until commit. Uncommitted entries never reach the queue.
    pub fn txn_enqueue(&mut self, txn: TxnId, entry: OpqEntry) -> Result<()> {
        entry.validate()?;
        let cap = self.opq.capacity();
        let buf = self
            .txns
            .get(&txn)
            .ok_or_else(|| Error::Usage(format!("no open transaction {txn}")))?;
        if buf.len() >= cap {
            return Err(Error::Usage(format!(
                "transaction {txn} exceeds the operation queue capacity of {cap}"
            )));
        }
        if let Some(wal) = &mut self.wal {
            wal.append(&LogRecord::Redo { txn, entry })?;
            self.crash.hit(CrashPoint::AfterRedo)?;
        }
        self.txns.get_mut(&txn).unwrap().push(entry);
        Ok(())
    }

    /// Makes room for the transaction's entries, forces the commit record,
    /// then queues the entries.
    pub fn commit(&mut self, txn: TxnId) -> Result<()> {
        let n = self
            .txns
            .get(&txn)
            .ok_or_else(|| Error::Usage(format!("no open transaction {txn}")))?
            .len();
        while self.opq.capacity() - self.opq.len() < n {
            self.flush_partial()?;
        }
        if let Some(wal) = &mut self.wal {
            wal.append_forced(&LogRecord::Commit { txn })?;
            self.crash.hit(CrashPoint::AfterCommit)?;
        }
        for e in self.txns.remove(&txn).unwrap() {
            self.opq.append(e);
        }
        Ok(())
    }

    /// Drops an open transaction. Its redo records stay in the log without
    /// a commit and are ignored by recovery.
    pub fn abort(&mut self, txn: TxnId) -> Result<()> {
        self.txns
            .remove(&txn)
            .map(|_| ())
            .ok_or_else(|| Error::Usage(format!("no open transaction {txn}")))
    }

    /// Flushes the whole queue, truncates the log and writes a checkpoint.
    pub fn checkpoint(&mut self) -> Result<()> {
        if !self.txns.is_empty() {
            return Err(Error::Usage("checkpoint requires no open transactions".into()));
        }
        self.flush_all()?;
        if let Some(wal) = &mut self.wal {
            wal.truncate_all()?;
            wal.append_forced(&LogRecord::Checkpoint)?;
        }
        Ok(())
    }

    /// Simulates a crash: memory is lost, the device pages and the durable
    /// part of the log survive.
    pub fn crash(self) -> Result<(Device, Box<dyn LogStore>)> {
        let PioBTree { dev, wal, .. } = self;
        let wal = wal.ok_or_else(|| Error::Usage("no write-ahead log attached".into()))?;
        Ok((dev, wal.crash()?))
    }

    /// Restart recovery: roll back any flush without a flush-end record
    /// using its page pre-images, open the tree, then re-queue every
    /// committed entry that no completed flush applied.
    pub fn recover(mut dev: Device, store: Box<dyn LogStore>, pool_pages: usize) -> Result<(Self, RecoveryReport)> {
        let (mut wal, records) = Wal::open(store)?;
        let mut report = RecoveryReport {
            records: records.len(),
            ..Default::default()
        };
        let from = records
            .iter()
            .rposition(|(_, r)| matches!(r, LogRecord::Checkpoint))
            .map_or(0, |i| i + 1);
        let records = &records[from..];

        let mut closed: HashMap<Lsn, bool> = HashMap::new();
        for (_, r) in records {
            match r {
                LogRecord::FlushEnd { start } => {
                    closed.insert(*start, true);
                }
                LogRecord::FlushAbort { start } => {
                    closed.insert(*start, false);
                }
                _ => {}
            }
        }

        // Undo phase: restore pre-images of every open flush, newest first.
        let mut open_flush: Option<Lsn> = None;
        let mut undo: Vec<(Lsn, PageId, &[u8])> = Vec::new();
        let mut open_starts = Vec::new();
        for (lsn, r) in records {
            match r {
                LogRecord::FlushStart { .. } => {
                    open_flush = (!closed.contains_key(lsn)).then_some(*lsn);
                    if open_flush.is_some() {
                        open_starts.push(*lsn);
                    }
                }
                LogRecord::FlushUndo { page, image } if open_flush.is_some() => undo.push((*lsn, *page, image)),
                LogRecord::FlushEnd { .. } | LogRecord::FlushAbort { .. } => open_flush = None,
                _ => {}
            }
        }
        if !undo.is_empty() {
            dev.rebuild_allocation(undo.iter().map(|u| u.1));
            for (_, page, image) in undo.iter().rev() {
                dev.psync_write(&[(*page, image)])?;
            }
            report.undone_pages = undo.len();
        }
        for start in &open_starts {
            wal.append(&LogRecord::FlushAbort { start: *start })?;
        }
        wal.force()?;
        report.undone_flushes = open_starts.len();

        // Redo phase: replay queue membership through the log.
        let mut pending: VecDeque<OpqEntry> = VecDeque::new();
        let mut txns: BTreeMap<TxnId, Vec<OpqEntry>> = BTreeMap::new();
        let mut starts: HashMap<Lsn, (Key, u64)> = HashMap::new();
        let mut max_txn = 0;
        for (lsn, r) in records {
            match r {
                LogRecord::Redo {
                    txn: AUTO_COMMIT,
                    entry,
                } => pending.push_back(*entry),
                LogRecord::Redo { txn, entry } => {
                    max_txn = max_txn.max(*txn);
                    txns.entry(*txn).or_default().push(*entry);
                }
                LogRecord::Commit { txn } => pending.extend(txns.remove(txn).unwrap_or_default()),
                LogRecord::FlushStart { hi, cut, .. } => {
                    starts.insert(*lsn, (*hi, *cut));
                }
                LogRecord::FlushEnd { start } => {
                    if let Some(&(hi, cut)) = starts.get(start) {
                        let mut left = cut;
                        pending.retain(|e| {
                            if e.key() < hi {
                                false
                            } else if e.key() == hi && left > 0 {
                                left -= 1;
                                false
                            } else {
                                true
                            }
                        });
                        report.completed_flushes += 1;
                    }
                }
                _ => {}
            }
        }

        let mut tree = PioBTree::open(dev, pool_pages)?;
        tree.next_txn = max_txn + 1;
        report.redone_entries = pending.len();
        for e in pending {
            tree.push_entry(e)?;
        }
        tree.wal = Some(wal);
        Ok((tree, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btree::{IndexRecord, TreeConfig};
    use crate::pio::PioConfig;
    use crate::recovery::{read_log, MemLog};
    use crate::DeviceConfig;

    fn t1() -> PioBTree {
        let dev = Device::emulated(DeviceConfig {
            page_count: 1 << 14,
            ..DeviceConfig::default()
        })
        .unwrap();
        let cfg = PioConfig {
            tree: TreeConfig::small(4, 4),
            leaf_segments: 1,
            opq_pages: 4,
            pio_max: 64,
            speriod: 5,
            bcnt: 100,
        };
        let recs: Vec<IndexRecord> = [1, 5, 10, 15, 20, 25, 30, 35]
            .iter()
            .map(|&k| IndexRecord::new(k, k * 10))
            .collect();
        let mut t = PioBTree::bulk_load(dev, cfg, &recs, 0.5).unwrap();
        t.attach_wal(Wal::open(Box::new(MemLog::new())).unwrap().0);
        t
    }

    fn tail(t: &PioBTree) -> Vec<String> {
        t.wal()
            .unwrap()
            .records()
            .unwrap()
            .iter()
            .map(|(_, r)| r.to_string())
            .collect()
    }

    #[test]
    fn flush_log_trace() {
        let mut t = t1();
        let leaves = t.leaf_pages().unwrap();
        t.insert(7, 70).unwrap();
        t.insert(22, 220).unwrap();
        t.flush_all().unwrap();
        let log = tail(&t);
        assert_eq!(
            log,
            vec![
                "redo txn=0 i(7, 70)".to_string(),
                "redo txn=0 i(22, 220)".into(),
                "flush-start [7, 22] cut=1".into(),
                format!("flush-undo page={}", leaves[0]),
                format!("flush-undo page={}", leaves[2]),
                "flush-end start=3".into(),
            ]
        );
    }

    #[test]
    fn redo_precedes_queue_append_and_commit_is_forced() {
        let mut t = t1();
        let txn = t.begin().unwrap();
        t.txn_insert(txn, 7, 1).unwrap();
        assert!(t.opq().is_empty());
        assert_eq!(t.wal().unwrap().durable_lsn(), 0);
        t.commit(txn).unwrap();
        assert_eq!(t.opq().len(), 1);
        assert_eq!(tail(&t), vec!["redo txn=1 i(7, 1)", "commit txn=1"]);
    }

    #[test]
    fn uncommitted_work_is_lost() {
        let mut t = t1();
        t.insert(2, 2).unwrap();
        let txn = t.begin().unwrap();
        t.txn_insert(txn, 3, 3).unwrap();
        let (dev, log) = t.crash().unwrap();
        let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!(report.redone_entries, 1);
        assert_eq!(t.point_search(2).unwrap(), Some(2));
        assert_eq!(t.point_search(3).unwrap(), None);
    }

    #[test]
    fn crash_mid_flush_restores_pre_images() {
        for point in [
            CrashPoint::AfterFlushStart,
            CrashPoint::AfterNodeWrite,
            CrashPoint::BeforeFlushEnd,
        ] {
            let mut t = t1();
            let leaves = t.leaf_pages().unwrap();
            let before: Vec<Vec<u8>> = t.device_mut().psync_read(&leaves).unwrap();
            for k in [2, 3, 4, 7, 22] {
                t.insert(k, k).unwrap();
            }
            t.crash_injector().arm(point, 1);
            assert!(t.flush_all().unwrap_err().is_crash());
            let (dev, log) = t.crash().unwrap();
            let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
            assert_eq!(report.undone_flushes, 1, "{point:?}");
            assert_eq!(report.redone_entries, 5);
            assert_eq!(t.device_mut().psync_read(&leaves).unwrap(), before, "{point:?}");
            assert_eq!(t.records().unwrap().len(), 13);
            t.audit().unwrap();
        }
    }

    #[test]
    fn completed_flush_is_not_redone_across_double_crash() {
        let mut t = t1();
        t.insert(2, 2).unwrap();
        t.delete(5).unwrap();
        t.crash_injector().arm(CrashPoint::AfterFlushEnd, 1);
        assert!(t.flush_all().unwrap_err().is_crash());
        let (dev, log) = t.crash().unwrap();
        let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!((report.completed_flushes, report.redone_entries), (1, 0));
        t.insert(5, 9).unwrap();
        let (dev, log) = t.crash().unwrap();
        let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!(report.redone_entries, 1);
        assert_eq!(t.point_search(5).unwrap(), Some(9));
        assert_eq!(t.point_search(2).unwrap(), Some(2));
        assert_eq!(t.records().unwrap().len(), 9);
    }

    #[test]
    fn checkpoint_empties_redo_set() {
        let mut t = t1();
        t.checkpoint().unwrap();
        assert_eq!(tail(&t), vec!["checkpoint"]);
        t.insert(2, 2).unwrap();
        t.checkpoint().unwrap();
        let (dev, log) = t.crash().unwrap();
        assert_eq!(read_log(log.as_ref()).unwrap().len(), 1);
        let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!(report.redone_entries, 0);
        assert_eq!(t.point_search(2).unwrap(), Some(2));
        let txn = t.begin().unwrap();
        assert!(t.checkpoint().is_err());
        t.abort(txn).unwrap();
    }

    #[test]
    fn empty_log_recovery_is_a_no_op() {
        let t = t1();
        let (dev, log) = t.crash().unwrap();
        let (mut t, report) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!(report, RecoveryReport::default());
        assert_eq!(t.records().unwrap().len(), 8);
    }

    #[test]
    fn torn_device_batch_is_undone() {
        let mut t = t1();
        let leaves = t.leaf_pages().unwrap();
        let before = t.device_mut().psync_read(&leaves).unwrap();
        for k in [2, 12, 22, 32] {
            t.insert(k, k).unwrap();
        }
        t.device_mut().set_write_budget(Some(2));
        assert!(t.flush_all().unwrap_err().is_crash());
        let (mut dev, log) = t.crash().unwrap();
        dev.set_write_budget(None);
        let (mut t, _) = PioBTree::recover(dev, log, 0).unwrap();
        assert_eq!(t.device_mut().psync_read(&leaves).unwrap(), before);
        assert_eq!(t.records().unwrap().len(), 12);
    }
}
