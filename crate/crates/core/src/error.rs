use crate::device::PageId;
use crate::Key;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("page {0} is not allocated")]
    Unallocated(PageId),
    #[error("page {0} freed twice")]
    DoubleFree(PageId),
    #[error("device is out of space")]
    OutOfSpace,
    #[error("invalid I/O request: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("duplicate key {0}")]
    DuplicateKey(Key),
    #[error("corrupt page {page}: {reason}")]
    Corrupt { page: PageId, reason: String },
    #[error("log error: {0}")]
    Log(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("simulated crash at {0}")]
    Crashed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::Crashed(_))
    }

    pub(crate) fn corrupt(page: PageId, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            page,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
