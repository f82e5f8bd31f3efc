//! Log records, their binary framing, and log stores.
//!
//! Each record is framed as:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PIOL"
//! 4       8     lsn, little endian
//! 12      1     record type
//! 13      4     payload length
//! 17      n     payload
//! 17+n    4     crc32 of bytes 4 .. 17+n
//! ```
//!
//! A record that is cut short or fails its checksum ends the log.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::device::PageId;
use crate::pio::OpqEntry;
use crate::{Key, Result};

pub type Lsn = u64;

/// Transaction id. Zero marks an auto-committed single operation.
pub type TxnId = u64;

pub const AUTO_COMMIT: TxnId = 0;

const MAGIC: &[u8; 4] = b"PIOL";
const FRAME_OVERHEAD: usize = 21;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    /// Logical redo for one queued operation.
    Redo {
        txn: TxnId,
        entry: OpqEntry,
    },
    Commit {
        txn: TxnId,
    },
    /// A flush of every queued entry with key < `hi`, plus the first `cut`
    /// entries (in append order) whose key equals `hi`. `lo` is the lowest
    /// flushed key.
    FlushStart {
        lo: Key,
        hi: Key,
        cut: u64,
    },
    /// Full pre-image of a page about to be overwritten by the open flush.
    FlushUndo {
        page: PageId,
        image: Vec<u8>,
    },
    FlushEnd {
        start: Lsn,
    },
    /// The open flush starting at `start` was rolled back by recovery.
    FlushAbort {
        start: Lsn,
    },
    /// All earlier operations are reflected in the tree pages.
    Checkpoint,
}

impl LogRecord {
    fn type_code(&self) -> u8 {
        match self {
            LogRecord::Redo { .. } => 1,
            LogRecord::Commit { .. } => 2,
            LogRecord::FlushStart { .. } => 3,
            LogRecord::FlushUndo { .. } => 4,
            LogRecord::FlushEnd { .. } => 5,
            LogRecord::FlushAbort { .. } => 6,
            LogRecord::Checkpoint => 7,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            LogRecord::Redo { txn, entry } => {
                p.extend(txn.to_le_bytes());
                let mut e = [0u8; 16];
                entry.encode_into(&mut e);
                p.extend(e);
            }
            LogRecord::Commit { txn } => p.extend(txn.to_le_bytes()),
            LogRecord::FlushStart { lo, hi, cut } => {
                p.extend(lo.to_le_bytes());
                p.extend(hi.to_le_bytes());
                p.extend(cut.to_le_bytes());
            }
            LogRecord::FlushUndo { page, image } => {
                p.extend(page.0.to_le_bytes());
                p.extend(image);
            }
            LogRecord::FlushEnd { start } | LogRecord::FlushAbort { start } => p.extend(start.to_le_bytes()),
            LogRecord::Checkpoint => {}
        }
        p
    }

    fn from_parts(code: u8, p: &[u8]) -> Option<Self> {
        let u = |i: usize| {
            p.get(i * 8..i * 8 + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        };
        Some(match code {
            1 if p.len() == 24 => LogRecord::Redo {
                txn: u(0)?,
                entry: OpqEntry::decode(&p[8..])?,
            },
            2 if p.len() == 8 => LogRecord::Commit { txn: u(0)? },
            3 if p.len() == 24 => LogRecord::FlushStart {
                lo: u(0)?,
                hi: u(1)?,
                cut: u(2)?,
            },
            4 if p.len() >= 8 => LogRecord::FlushUndo {
                page: PageId(u(0)?),
                image: p[8..].to_vec(),
            },
            5 if p.len() == 8 => LogRecord::FlushEnd { start: u(0)? },
            6 if p.len() == 8 => LogRecord::FlushAbort { start: u(0)? },
            7 if p.is_empty() => LogRecord::Checkpoint,
            _ => return None,
        })
    }

    pub fn encode(&self, lsn: Lsn) -> Vec<u8> {
        let payload = self.payload();
        let mut buf = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
        buf.extend(MAGIC);
        buf.extend(lsn.to_le_bytes());
        buf.push(self.type_code());
        buf.extend((payload.len() as u32).to_le_bytes());
        buf.extend(&payload);
        let crc = crc32fast::hash(&buf[4..]);
        buf.extend(crc.to_le_bytes());
        buf
    }

    /// Decodes every valid record from the start of `bytes`, stopping at the
    /// first torn or corrupt one. Returns the records and the valid length.
    pub fn decode_all(bytes: &[u8]) -> (Vec<(Lsn, LogRecord)>, usize) {
        let mut out = Vec::new();
        let mut pos = 0;
        while let Some((lsn, rec, len)) = Self::decode_one(&bytes[pos..]) {
            if out.last().is_some_and(|&(prev, _)| lsn <= prev) {
                break;
            }
            out.push((lsn, rec));
            pos += len;
        }
        (out, pos)
    }

    fn decode_one(b: &[u8]) -> Option<(Lsn, LogRecord, usize)> {
        if b.len() < FRAME_OVERHEAD || &b[..4] != MAGIC {
            return None;
        }
        let lsn = u64::from_le_bytes(b[4..12].try_into().unwrap());
        let code = b[12];
        let len = u32::from_le_bytes(b[13..17].try_into().unwrap()) as usize;
        let end = 17usize.checked_add(len)?;
        if b.len() < end + 4 {
            return None;
        }
        let crc = u32::from_le_bytes(b[end..end + 4].try_into().unwrap());
        if crc32fast::hash(&b[4..end]) != crc {
            return None;
        }
        Some((lsn, Self::from_parts(code, &b[17..end])?, end + 4))
    }
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogRecord::Redo { txn, entry } => {
                write!(
                    f,
                    "redo txn={txn} {}({}, {})",
                    entry.op.as_char(),
                    entry.rec.key,
                    entry.rec.ptr
                )
            }
            LogRecord::Commit { txn } => write!(f, "commit txn={txn}"),
            LogRecord::FlushStart { lo, hi, cut } => write!(f, "flush-start [{lo}, {hi}] cut={cut}"),
            LogRecord::FlushUndo { page, .. } => write!(f, "flush-undo page={page}"),
            LogRecord::FlushEnd { start } => write!(f, "flush-end start={start}"),
            LogRecord::FlushAbort { start } => write!(f, "flush-abort start={start}"),
            LogRecord::Checkpoint => write!(f, "checkpoint"),
        }
    }
}

/// Append-only byte log with an explicit durability point.
pub trait LogStore: std::fmt::Debug + Send {
    fn append(&mut self, bytes: &[u8]) -> Result<()>;
    /// Makes every appended byte durable.
    fn force(&mut self) -> Result<()>;
    /// Bytes that would survive a crash right now.
    fn durable(&self) -> Result<Vec<u8>>;
    /// Discards everything after the first `len` bytes.
    fn truncate(&mut self, len: usize) -> Result<()>;
    /// Returns the store reduced to what survives a crash.
    fn crash(self: Box<Self>) -> Result<Box<dyn LogStore>>;
}

/// In-memory log; bytes past the last force are lost on crash.
#[derive(Debug, Default, Clone)]
pub struct MemLog {
    bytes: Vec<u8>,
    durable_len: usize,
}

impl MemLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        MemLog {
            durable_len: bytes.len(),
            bytes,
        }
    }
}

impl LogStore for MemLog {
    fn append(&mut self, bytes: &[u8]) -> Result<()> {
        self.bytes.extend_from_slice(bytes);
        Ok(())
    }

    fn force(&mut self) -> Result<()> {
        self.durable_len = self.bytes.len();
        Ok(())
    }

    fn durable(&self) -> Result<Vec<u8>> {
        Ok(self.bytes[..self.durable_len].to_vec())
    }

    fn truncate(&mut self, len: usize) -> Result<()> {
        self.bytes.truncate(len);
        self.durable_len = self.durable_len.min(len);
        Ok(())
    }

    fn crash(self: Box<Self>) -> Result<Box<dyn LogStore>> {
        Ok(Box::new(MemLog::from_bytes(self.durable()?)))
    }
}

/// Log file; `force` calls `sync_data`.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        Ok(FileLog { path, file })
    }
}

impl LogStore for FileLog {
    fn append(&mut self, bytes: &[u8]) -> Result<()> {
        self.file.write_all(bytes)?;
        Ok(())
    }

    fn force(&mut self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }

    fn durable(&self) -> Result<Vec<u8>> {
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(0))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn truncate(&mut self, len: usize) -> Result<()> {
        self.file.set_len(len as u64)?;
        Ok(())
    }

    fn crash(self: Box<Self>) -> Result<Box<dyn LogStore>> {
        Ok(Box::new(FileLog::open(&self.path)?))
    }
}

/// Write-ahead log: assigns LSNs and frames records onto a [`LogStore`].
#[derive(Debug)]
pub struct Wal {
    store: Box<dyn LogStore>,
    next_lsn: Lsn,
    forced_lsn: Lsn,
}

impl Wal {
    /// Opens a log, discarding any torn tail. Returns the surviving records.
    pub fn open(mut store: Box<dyn LogStore>) -> Result<(Self, Vec<(Lsn, LogRecord)>)> {
        let bytes = store.durable()?;
        let (records, valid) = LogRecord::decode_all(&bytes);
        if valid < bytes.len() {
            store.truncate(valid)?;
            store.force()?;
        }
        let next_lsn = records.last().map_or(1, |&(l, _)| l + 1);
        let wal = Wal {
            store,
            next_lsn,
            forced_lsn: next_lsn - 1,
        };
        Ok((wal, records))
    }

    pub fn in_memory() -> Self {
        Wal {
            store: Box::new(MemLog::new()),
            next_lsn: 1,
            forced_lsn: 0,
        }
    }

    pub fn append(&mut self, rec: &LogRecord) -> Result<Lsn> {
        let lsn = self.next_lsn;
        self.store.append(&rec.encode(lsn))?;
        self.next_lsn += 1;
        Ok(lsn)
    }

    pub fn force(&mut self) -> Result<()> {
        if self.forced_lsn + 1 < self.next_lsn {
            self.store.force()?;
            self.forced_lsn = self.next_lsn - 1;
        }
        Ok(())
    }

    pub fn append_forced(&mut self, rec: &LogRecord) -> Result<Lsn> {
        let lsn = self.append(rec)?;
        self.force()?;
        Ok(lsn)
    }

    /// Highest LSN known durable.
    pub fn durable_lsn(&self) -> Lsn {
        self.forced_lsn
    }

    /// Every durable record currently in the log.
    pub fn records(&self) -> Result<Vec<(Lsn, LogRecord)>> {
        Ok(LogRecord::decode_all(&self.store.durable()?).0)
    }

    /// Drops every record, keeping the LSN sequence.
    pub fn truncate_all(&mut self) -> Result<()> {
        self.store.truncate(0)?;
        self.store.force()
    }

    /// What the log store holds after a crash.
    pub fn crash(self) -> Result<Box<dyn LogStore>> {
        self.store.crash()
    }
}

/// Convenience for tests and the CLI: the decoded records of a log store.
pub fn read_log(store: &dyn LogStore) -> Result<Vec<(Lsn, LogRecord)>> {
    Ok(LogRecord::decode_all(&store.durable()?).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<LogRecord> {
        vec![
            LogRecord::Redo {
                txn: 3,
                entry: OpqEntry::insert(7, 70),
            },
            LogRecord::Redo {
                txn: 0,
                entry: OpqEntry::delete(9),
            },
            LogRecord::Commit { txn: 3 },
            LogRecord::FlushStart { lo: 1, hi: 22, cut: 2 },
            LogRecord::FlushUndo {
                page: PageId(4),
                image: vec![1, 2, 3],
            },
            LogRecord::FlushEnd { start: 4 },
            LogRecord::FlushAbort { start: 4 },
            LogRecord::Checkpoint,
        ]
    }

    #[test]
    fn framing_round_trip() {
        let mut bytes = Vec::new();
        for (i, r) in sample().iter().enumerate() {
            bytes.extend(r.encode(i as u64 + 1));
        }
        let (recs, len) = LogRecord::decode_all(&bytes);
        assert_eq!(len, bytes.len());
        assert_eq!(recs.into_iter().map(|(_, r)| r).collect::<Vec<_>>(), sample());
    }

    #[test]
    fn torn_tail_is_discarded() {
        let mut bytes = Vec::new();
        for (i, r) in sample().iter().enumerate() {
            bytes.extend(r.encode(i as u64 + 1));
        }
        let full = bytes.len();
        bytes.truncate(full - 3);
        let (recs, len) = LogRecord::decode_all(&bytes);
        assert_eq!(recs.len(), sample().len() - 1);
        let mut corrupt = bytes[..len].to_vec();
        corrupt[30] ^= 0xff;
        assert!(LogRecord::decode_all(&corrupt).0.len() < recs.len());
    }

    #[test]
    fn unforced_records_are_lost_on_crash() {
        let (mut wal, recs) = Wal::open(Box::new(MemLog::new())).unwrap();
        assert!(recs.is_empty());
        wal.append_forced(&LogRecord::Commit { txn: 1 }).unwrap();
        wal.append(&LogRecord::Commit { txn: 2 }).unwrap();
        let store = wal.crash().unwrap();
        let (wal, recs) = Wal::open(store).unwrap();
        assert_eq!(recs, vec![(1, LogRecord::Commit { txn: 1 })]);
        assert_eq!(wal.durable_lsn(), 1);
    }

    #[test]
    fn file_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wal.log");
        let (mut wal, _) = Wal::open(Box::new(FileLog::open(&path).unwrap())).unwrap();
        for r in sample() {
            wal.append(&r).unwrap();
        }
        wal.force().unwrap();
        drop(wal);
        let (wal, recs) = Wal::open(Box::new(FileLog::open(&path).unwrap())).unwrap();
        assert_eq!(recs.len(), sample().len());
        assert_eq!(wal.durable_lsn(), sample().len() as u64);
    }
}
