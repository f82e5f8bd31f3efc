use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::Result;

/// Backing storage for device pages. Unwritten pages read as zeros.
pub trait PageStore: Send {
    fn read_page(&mut self, page: u64, buf: &mut [u8]) -> Result<()>;
    fn write_page(&mut self, page: u64, data: &[u8]) -> Result<()>;
    fn sync(&mut self) -> Result<()>;
}

/// In-memory page store used by the emulated device.
#[derive(Debug, Default)]
pub struct MemStore {
    pages: Vec<Option<Box<[u8]>>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl PageStore for MemStore {
    fn read_page(&mut self, page: u64, buf: &mut [u8]) -> Result<()> {
        match self.pages.get(page as usize).and_then(|p| p.as_deref()) {
            Some(data) => buf.copy_from_slice(data),
            None => buf.fill(0),
        }
        Ok(())
    }

    fn write_page(&mut self, page: u64, data: &[u8]) -> Result<()> {
        let idx = page as usize;
        if idx >= self.pages.len() {
            self.pages.resize_with(idx + 1, || None);
        }
        match &mut self.pages[idx] {
            Some(existing) => existing.copy_from_slice(data),
            slot => *slot = Some(data.to_vec().into_boxed_slice()),
        }
        Ok(())
    }

    fn sync(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Single data file; page `p` lives at byte offset `p * page_size`.
#[derive(Debug)]
pub struct FileStore {
    file: File,
    page_size: u64,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>, page_size: usize) -> Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        Ok(FileStore {
            file,
            page_size: page_size as u64,
        })
    }
}

impl PageStore for FileStore {
    fn read_page(&mut self, page: u64, buf: &mut [u8]) -> Result<()> {
        let offset = page * self.page_size;
        let len = self.file.metadata()?.len();
        if offset >= len {
            buf.fill(0);
            return Ok(());
        }
        let avail = ((len - offset) as usize).min(buf.len());
        self.file.read_exact_at(&mut buf[..avail], offset)?;
        buf[avail..].fill(0);
        Ok(())
    }

    fn write_page(&mut self, page: u64, data: &[u8]) -> Result<()> {
        self.file.write_all_at(data, page * self.page_size)?;
        Ok(())
    }

    fn sync(&mut self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}
