use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use super::TraceOp;
use crate::btree::{IndexKind as StoredKind, Superblock, SUPERBLOCK_PAGE};
use crate::pio::MAX_PTR;
use crate::{BPlusTree, DataPtr, Device, DeviceStats, Error, IndexRecord, Key, PioBTree, PioConfig, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexKind {
    Baseline,
    Pio,
}

impl IndexKind {
    pub const ALL: [IndexKind; 2] = [IndexKind::Baseline, IndexKind::Pio];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Baseline => "bplus",
            IndexKind::Pio => "pio",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bplus" | "baseline" => Ok(IndexKind::Baseline),
            "pio" => Ok(IndexKind::Pio),
            _ => Err(Error::InvalidInput(format!(
                "unknown index {s:?} (expected bplus or pio)"
            ))),
        }
    }
}

/// Either index behind one interface. Inserts of present keys, and
/// updates or deletes of absent keys, are no-ops on both.
pub enum Index {
    Baseline(BPlusTree),
    Pio(PioBTree),
}

impl Index {
    /// Bulk loads `records` (sorted, unique). The baseline uses `cfg.tree`.
    pub fn bulk_load(
        kind: IndexKind,
        dev: Device,
        cfg: &PioConfig,
        records: &[IndexRecord],
        fill: f64,
    ) -> Result<Self> {
        Ok(match kind {
            IndexKind::Baseline => Index::Baseline(BPlusTree::bulk_load(dev, cfg.tree, records, fill)?),
            IndexKind::Pio => Index::Pio(PioBTree::bulk_load(dev, *cfg, records, fill)?),
        })
    }

    /// Opens whichever index the device's superblock describes.
    pub fn open(mut dev: Device, pool_pages: usize) -> Result<Self> {
        dev.rebuild_allocation([SUPERBLOCK_PAGE]);
        let sb = Superblock::decode(&dev.psync_read(&[SUPERBLOCK_PAGE])?[0])?;
        Ok(match sb.kind {
            StoredKind::Baseline => Index::Baseline(BPlusTree::open(dev, pool_pages)?),
            StoredKind::Pio => Index::Pio(PioBTree::open(dev, pool_pages)?),
        })
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Baseline(_) => IndexKind::Baseline,
            Index::Pio(_) => IndexKind::Pio,
        }
    }

    pub fn device(&self) -> &Device {
        match self {
            Index::Baseline(t) => t.device(),
            Index::Pio(t) => t.device(),
        }
    }

    pub fn search(&mut self, key: Key) -> Result<Option<DataPtr>> {
        match self {
            Index::Baseline(t) => t.search(key),
            Index::Pio(t) => t.point_search(key),
        }
    }

    pub fn insert(&mut self, key: Key, ptr: DataPtr) -> Result<()> {
        match self {
            Index::Baseline(t) => match t.insert(IndexRecord::new(key, ptr)) {
                Err(Error::DuplicateKey(_)) => Ok(()),
                r => r,
            },
            Index::Pio(t) => t.insert(key, ptr),
        }
    }

    pub fn delete(&mut self, key: Key) -> Result<()> {
        match self {
            Index::Baseline(t) => t.delete(key).map(drop),
            Index::Pio(t) => t.delete(key),
        }
    }

    pub fn update(&mut self, key: Key, ptr: DataPtr) -> Result<()> {
        match self {
            Index::Baseline(t) => t.update(IndexRecord::new(key, ptr)).map(drop),
            Index::Pio(t) => t.update(key, ptr),
        }
    }

    /// Records with `start <= key <= end`.
    pub fn range(&mut self, start: Key, end: Key) -> Result<Vec<IndexRecord>> {
        let end = end.saturating_add(1);
        match self {
            Index::Baseline(t) => t.range_search_legacy(start, end),
            Index::Pio(t) => t.prange_search(start, end),
        }
    }

    /// Makes every applied operation durable: writes back dirty baseline
    /// pages, flushes the whole PIO queue.
    pub fn finish(&mut self) -> Result<()> {
        match self {
            Index::Baseline(t) => t.flush(),
            Index::Pio(t) => t.flush_all(),
        }
    }

    pub fn audit(&mut self) -> Result<usize> {
        match self {
            Index::Baseline(t) => t.audit(),
            Index::Pio(t) => t.audit(),
        }
    }

    /// Makes everything durable and marks the index clean.
    pub fn close(self) -> Result<Device> {
        match self {
            Index::Baseline(t) => t.close(),
            Index::Pio(t) => t.close(),
        }
    }

    pub fn into_device(self) -> Device {
        match self {
            Index::Baseline(t) => t.into_device(),
            Index::Pio(t) => t.into_device(),
        }
    }
}

/// Operation count and simulated device time of one operation type.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OpStat {
    pub count: u64,
    pub sim_us: f64,
}

impl OpStat {
    fn add(&mut self, us: f64) {
        self.count += 1;
        self.sim_us += us;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub index: IndexKind,
    pub ops: u64,
    pub search: OpStat,
    pub insert: OpStat,
    pub delete: OpStat,
    pub update: OpStat,
    pub range: OpStat,
    /// The closing write-back / queue flush.
    pub flush: OpStat,
    pub device: DeviceStats,
    pub search_hits: u64,
    pub range_records: u64,
    pub wall_secs: f64,
}

impl RunReport {
    fn new(index: IndexKind) -> Self {
        RunReport {
            index,
            ops: 0,
            search: OpStat::default(),
            insert: OpStat::default(),
            delete: OpStat::default(),
            update: OpStat::default(),
            range: OpStat::default(),
            flush: OpStat::default(),
            device: DeviceStats::default(),
            search_hits: 0,
            range_records: 0,
            wall_secs: 0.0,
        }
    }

    /// Simulated device time per operation, closing flush included.
    pub fn sim_us_per_op(&self) -> f64 {
        if self.ops == 0 {
            return 0.0;
        }
        self.device.simulated_time_us / self.ops as f64
    }

    /// Operations per second of simulated device time.
    pub fn sim_ops_per_sec(&self) -> f64 {
        if self.device.simulated_time_us == 0.0 {
            return 0.0;
        }
        self.ops as f64 * 1e6 / self.device.simulated_time_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Check every search and range result, and the final contents,
    /// against a shadow map.
    pub verify: bool,
    /// Run `Index::finish` after the last operation.
    pub finish: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            verify: false,
            finish: true,
        }
    }
}

/// Data pointer written by the operation at `position` of a trace.
pub fn op_ptr(position: usize) -> DataPtr {
    ((1u64 << 40) + position as u64) & MAX_PTR
}

/// Runs `ops` in order against `index`. `initial` is the index content
/// before the first operation; it seeds the shadow map when verifying.
pub fn replay(index: &mut Index, ops: &[TraceOp], initial: &[IndexRecord], opts: ReplayOptions) -> Result<RunReport> {
    let mut shadow: BTreeMap<Key, DataPtr> = if opts.verify {
        initial.iter().map(|r| (r.key, r.ptr)).collect()
    } else {
        BTreeMap::new()
    };
    let mut report = RunReport::new(index.kind());
    let start = index.device().stats();
    let wall = Instant::now();
    for (i, &op) in ops.iter().enumerate() {
        let before = index.device().stats().simulated_time_us;
        let stat = match op {
            TraceOp::Search(k) => {
                let got = index.search(k)?;
                report.search_hits += u64::from(got.is_some());
                if opts.verify && got != shadow.get(&k).copied() {
                    return Err(mismatch(i, op, k, got, shadow.get(&k).copied()));
                }
                &mut report.search
            }
            TraceOp::Insert(k) => {
                index.insert(k, op_ptr(i))?;
                if opts.verify {
                    shadow.entry(k).or_insert(op_ptr(i));
                }
                &mut report.insert
            }
            TraceOp::Delete(k) => {
                index.delete(k)?;
                shadow.remove(&k);
                &mut report.delete
            }
            TraceOp::Update(k) => {
                index.update(k, op_ptr(i))?;
                if let Some(p) = shadow.get_mut(&k) {
                    *p = op_ptr(i);
                }
                &mut report.update
            }
            TraceOp::Range(a, b) => {
                let got = index.range(a, b)?;
                report.range_records += got.len() as u64;
                if opts.verify {
                    compare_range(i, op, &got, shadow.range(a..=b))?;
                }
                &mut report.range
            }
        };
        stat.add(index.device().stats().simulated_time_us - before);
        report.ops += 1;
    }
    if opts.finish {
        let before = index.device().stats().simulated_time_us;
        index.finish()?;
        report.flush.add(index.device().stats().simulated_time_us - before);
    }
    report.wall_secs = wall.elapsed().as_secs_f64();
    report.device = index.device().stats().since(&start);
    if opts.verify {
        let all = index.range(0, crate::MAX_KEY)?;
        compare_range(ops.len(), TraceOp::Range(0, crate::MAX_KEY), &all, shadow.range(..))?;
    }
    Ok(report)
}

fn mismatch(i: usize, op: TraceOp, key: Key, got: Option<DataPtr>, want: Option<DataPtr>) -> Error {
    Error::Verify(format!(
        "op {i} ({op}): key {key}: index returned {got:?}, oracle has {want:?}"
    ))
}

fn compare_range<'a>(
    i: usize,
    op: TraceOp,
    got: &[IndexRecord],
    want: impl Iterator<Item = (&'a Key, &'a DataPtr)>,
) -> Result<()> {
    let mut got = got.iter();
    let mut want = want.map(|(&k, &p)| IndexRecord::new(k, p));
    loop {
        match (got.next().copied(), want.next()) {
            (None, None) => return Ok(()),
            (g, w) if g == w => continue,
            (g, w) => {
                let key = match (g, w) {
                    (Some(g), Some(w)) => g.key.min(w.key),
                    (Some(r), None) | (None, Some(r)) => r.key,
                    (None, None) => unreachable!(),
                };
                let lookup = |r: Option<IndexRecord>| r.filter(|r| r.key == key).map(|r| r.ptr);
                return Err(mismatch(i, op, key, lookup(g), lookup(w)));
            }
        }
    }
}
